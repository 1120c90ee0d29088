"""Nodule annotation records and the LUNA16-format CSV parser."""

import csv
from dataclasses import dataclass
from typing import Optional

BENIGN = "benign"
MALIGNANT = "malignant"

_COLUMNS = ("seriesuid", "coordX", "coordY", "coordZ", "diameter_mm")


class AnnotationError(ValueError):
    """Malformed annotation file or record."""


@dataclass(frozen=True)
class NoduleAnnotation:
    """One annotated nodule.

    center_world is stored (z, y, x) mm, permuted from the CSV's
    (x, y, z) column order at parse time. malignancy is None for
    detection-stage records and "benign"/"malignant" for
    classification-stage ones.
    """

    series_id: str
    center_world: tuple
    diameter_mm: float
    malignancy: Optional[str] = None

    def __post_init__(self):
        if self.diameter_mm <= 0:
            raise AnnotationError(f"diameter must be > 0, got {self.diameter_mm}")
        if self.malignancy not in (None, BENIGN, MALIGNANT):
            raise AnnotationError(f"unknown malignancy label {self.malignancy!r}")

    @property
    def radius_mm(self):
        return self.diameter_mm / 2.0


def malignancy_from_median_score(median_score):
    """Map a radiologist median malignancy score (1-5) onto a binary label.

    Conventional LIDC-IDRI reading: >= 4 malignant, <= 2 benign, score-3
    nodules are indeterminate and return None (callers should exclude them).
    """
    if median_score >= 4:
        return MALIGNANT
    if median_score <= 2:
        return BENIGN
    return None


def parse_annotations(csv_path):
    """Parse a LUNA16-format annotations CSV into NoduleAnnotation records.

    Expects a header row `seriesuid,coordX,coordY,coordZ,diameter_mm`.
    An optional trailing `malignancy` column (benign/malignant) is honored.
    Bad rows fail loudly with their 1-based row number.
    """
    with open(csv_path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise AnnotationError(f"{csv_path}: empty file") from None
        header = [h.strip() for h in header]
        for col in _COLUMNS:
            if col not in header:
                raise AnnotationError(f"{csv_path}: missing column {col!r}")
        idx = {col: header.index(col) for col in _COLUMNS}
        mal_idx = header.index("malignancy") if "malignancy" in header else None

        records = []
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                x = float(row[idx["coordX"]])
                y = float(row[idx["coordY"]])
                z = float(row[idx["coordZ"]])
                d = float(row[idx["diameter_mm"]])
            except (ValueError, IndexError) as exc:
                raise AnnotationError(f"{csv_path}: row {row_no}: non-numeric field ({exc})")
            if d <= 0:
                raise AnnotationError(f"{csv_path}: row {row_no}: diameter must be > 0, got {d}")
            malignancy = None
            if mal_idx is not None and mal_idx < len(row) and row[mal_idx].strip():
                malignancy = row[mal_idx].strip().lower()
                if malignancy not in (BENIGN, MALIGNANT):
                    raise AnnotationError(
                        f"{csv_path}: row {row_no}: bad malignancy {row[mal_idx]!r}")
            records.append(NoduleAnnotation(
                series_id=row[idx["seriesuid"]].strip(),
                center_world=(z, y, x),
                diameter_mm=d,
                malignancy=malignancy,
            ))
    return records


def write_annotations(csv_path, annotations):
    """Inverse of `parse_annotations`; writes the malignancy column when any
    record carries a label."""
    with_label = any(a.malignancy is not None for a in annotations)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = list(_COLUMNS) + (["malignancy"] if with_label else [])
        writer.writerow(header)
        for a in annotations:
            z, y, x = a.center_world
            row = [a.series_id, repr(float(x)), repr(float(y)), repr(float(z)),
                   repr(float(a.diameter_mm))]
            if with_label:
                row.append(a.malignancy or "")
            writer.writerow(row)
