"""End-to-end orchestration: preprocess -> segment -> detect -> classify.

Stage order is fixed. Detections whose centers fall outside the predicted
lung mask are dropped by default (the mask gate), since the lung crop is the
whole point of running segmentation first; `mask_gate=False` disables it.

CaseReport timing is measured wall-clock and therefore written to a separate
timings.json; report.json itself is byte-deterministic for fixed seed and
checkpoints.
"""

import dataclasses
import json
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .data.metaimage import load_metaimage
from .data.patches import crop_patch_at
from .models.classifier import CLASS_NAMES
from .volume import LungMask, clip_and_normalize_hu, crop_foreground, resample_to_canonical
from .metrics import dice_score


@dataclass
class ReportedDetection:
    """One gated detection with its classification, in crop-slice coordinates."""

    slice_index: int          # z within the lung crop
    canonical_z: int          # z within the canonical resampled volume
    cx: float
    cy: float
    w: float
    h: float
    score: float
    p_benign: float
    p_malignant: float
    label: str


@dataclass
class CaseReport:
    series_id: str
    canonical_cube: int
    degenerate: bool
    mask_voxels: int
    crop_lo: tuple
    crop_hi: tuple
    detections: list
    mask_dice_vs_reference: float = None
    seed: int = 0
    timings: dict = field(default_factory=dict)

    def to_dict(self, include_timings=False):
        out = {
            "series_id": self.series_id,
            "canonical_cube": self.canonical_cube,
            "degenerate": self.degenerate,
            "mask_voxels": self.mask_voxels,
            "crop_lo": list(self.crop_lo),
            "crop_hi": list(self.crop_hi),
            "mask_dice_vs_reference": self.mask_dice_vs_reference,
            "seed": self.seed,
            "detections": [dataclasses.asdict(d) for d in self.detections],
        }
        if include_timings:
            out["timings"] = dict(self.timings)
        return out


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and original cause."""

    def __init__(self, stage, cause):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


@contextmanager
def _stage(name):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _resize_grid(arr, target_shape, order):
    factors = tuple(t / s for t, s in zip(target_shape, arr.shape))
    out = ndimage.zoom(arr, factors, order=order, mode="nearest", grid_mode=True)
    return out[tuple(slice(0, t) for t in target_shape)]


def predict_lung_mask(volume, segmenter):
    """Segment a normalized canonical volume, resampling through the
    checkpoint's cube when it differs from the volume's."""
    cube = segmenter.input_cube
    if volume.shape == (cube,) * 3:
        mask = segmenter.predict(volume.voxels)
    else:
        small = _resize_grid(volume.voxels, (cube,) * 3, order=1)
        small_mask = segmenter.predict(np.clip(small, 0.0, 1.0))
        mask = _resize_grid(small_mask, volume.shape, order=0)
    return LungMask((mask > 0).astype(np.uint8), volume.spacing, volume.origin)


def run_inference(ct_path, config, segmenter, detector, classifier,
                  reference_mask=None):
    """Produce a CaseReport for one CT volume.

    reference_mask: optional binary grid aligned with the raw volume; when
    given, the predicted mask's Dice against it (after resampling) lands in
    the report.
    """
    timings = {}
    series_id = os.path.splitext(os.path.basename(str(ct_path)))[0]

    t0 = time.perf_counter()
    with _stage("preprocess"):
        volume = load_metaimage(ct_path)
        normalized = clip_and_normalize_hu(volume)
        ref = None
        if reference_mask is not None:
            ref = LungMask((np.asarray(reference_mask.voxels) > 0).astype(np.uint8),
                           volume.spacing, volume.origin)
        canonical, ref_canonical = resample_to_canonical(
            normalized, ref, cube_size=config.canonical_cube)
    timings["preprocess_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    with _stage("segment"):
        mask = predict_lung_mask(canonical, segmenter)
    timings["segment_s"] = time.perf_counter() - t0

    dice_ref = None
    if ref_canonical is not None:
        dice_ref = dice_score(mask.voxels > 0, ref_canonical.voxels > 0)

    if mask.foreground_count() == 0:
        return CaseReport(series_id=series_id, canonical_cube=config.canonical_cube,
                          degenerate=True, mask_voxels=0,
                          crop_lo=(0, 0, 0), crop_hi=(0, 0, 0), detections=[],
                          mask_dice_vs_reference=dice_ref, seed=config.seed,
                          timings=timings)

    crop_vol, crop_mask, crop_box = crop_foreground(canonical, mask,
                                                    margin=config.crop_margin)

    t0 = time.perf_counter()
    with _stage("detect"):
        planes = [crop_vol.voxels[z] for z in range(crop_vol.shape[0])]
        per_slice = []
        chunk = 16
        for start in range(0, len(planes), chunk):
            per_slice.extend(detector.predict(planes[start:start + chunk]))
    timings["detect_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    detections = []
    nz, ny, nx = crop_vol.shape
    with _stage("classify"):
        for z, dets in enumerate(per_slice):
            for det in dets:
                py = det.cy * ny
                px = det.cx * nx
                iy = min(int(py), ny - 1)
                ix = min(int(px), nx - 1)
                if config.mask_gate and not crop_mask.voxels[z, iy, ix]:
                    continue
                patch = crop_patch_at(planes[z], py - 0.5, px - 0.5)
                proba = classifier.predict_proba(np.clip(patch, 0.0, 1.0))[0]
                label = CLASS_NAMES[int(np.argmax(proba))]
                detections.append(ReportedDetection(
                    slice_index=z, canonical_z=z + crop_box.lo[0],
                    cx=round(float(det.cx), 6), cy=round(float(det.cy), 6),
                    w=round(float(det.w), 6), h=round(float(det.h), 6),
                    score=round(float(det.score), 6),
                    p_benign=round(float(proba[0]), 6),
                    p_malignant=round(float(proba[1]), 6),
                    label=label))
    timings["classify_s"] = time.perf_counter() - t0

    return CaseReport(series_id=series_id, canonical_cube=config.canonical_cube,
                      degenerate=False, mask_voxels=mask.foreground_count(),
                      crop_lo=crop_box.lo, crop_hi=crop_box.hi,
                      detections=detections, mask_dice_vs_reference=dice_ref,
                      seed=config.seed, timings=timings)


def write_case_report(report, out_dir):
    """Persist report.json (deterministic), timings.json, and the CSVs."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "timings.json"), "w", encoding="utf-8") as fh:
        json.dump(report.timings, fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(os.path.join(out_dir, "detections.csv"), "w", encoding="utf-8") as fh:
        fh.write("slice,cx,cy,w,h,score\n")
        for d in report.detections:
            fh.write(f"{d.slice_index},{d.cx:.6f},{d.cy:.6f},{d.w:.6f},"
                     f"{d.h:.6f},{d.score:.6f}\n")

    with open(os.path.join(out_dir, "predictions.csv"), "w", encoding="utf-8") as fh:
        fh.write("series,index,p_benign,p_malignant,label\n")
        for i, d in enumerate(report.detections):
            fh.write(f"{report.series_id},{i},{d.p_benign:.6f},"
                     f"{d.p_malignant:.6f},{d.label}\n")
