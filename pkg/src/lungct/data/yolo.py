"""Per-slice detection labels in YOLO text format, plus slice PNG export.

Label geometry comes from slicing the annotated nodule sphere: an axial
plane at height dz from the sphere center cuts a disk of radius
sqrt(r^2 - dz^2), which becomes an axis-aligned box in normalized slice
coordinates.
"""

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from ..volume import world_to_voxel

NODULE_CLASS_ID = 0
MIN_BOX_PIXELS = 2.0  # clamped slivers thinner than this are unlabelable


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class YoloLabelRecord:
    """`class cx cy w h` with all box fields normalized into [0, 1]."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.class_id < 0:
            raise LabelError(f"class_id must be >= 0, got {self.class_id}")
        eps = 1e-9
        for lo, hi, axis in ((self.cx - self.w / 2, self.cx + self.w / 2, "x"),
                             (self.cy - self.h / 2, self.cy + self.h / 2, "y")):
            if lo < -eps or hi > 1 + eps:
                raise LabelError(f"box exceeds unit square on {axis}: [{lo}, {hi}]")
        if self.w <= 0 or self.h <= 0:
            raise LabelError(f"box must have positive size, got w={self.w} h={self.h}")

    def corners(self):
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)


def _clamp_box(cx, cy, w, h):
    x1 = max(0.0, cx - w / 2)
    y1 = max(0.0, cy - h / 2)
    x2 = min(1.0, cx + w / 2)
    y2 = min(1.0, cy + h / 2)
    if x2 <= x1 or y2 <= y1:
        return None
    return ((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


def slice_bounding_boxes(annotation, volume):
    """Emit (z_index, YoloLabelRecord) for every axial slice cutting the nodule.

    The annotation center must lie inside the volume; spheres clipped by the
    volume edge produce boxes clamped to the unit square, and clamped boxes
    thinner than MIN_BOX_PIXELS are dropped.
    """
    cz, cy, cx = annotation.center_world
    world_to_voxel(annotation.center_world, volume)  # raises if center outside
    r = annotation.radius_mm
    nz, ny, nx = volume.shape
    sz, sy, sx = volume.spacing
    oz, oy, ox = volume.origin

    vy = (cy - oy) / sy
    vx = (cx - ox) / sx
    cy_n = (vy + 0.5) / ny
    cx_n = (vx + 0.5) / nx

    out = []
    for z in range(nz):
        dz = oz + z * sz - cz
        if abs(dz) > r:
            continue
        r_z = math.sqrt(max(r * r - dz * dz, 0.0))
        w_n = 2.0 * r_z / (sx * nx)
        h_n = 2.0 * r_z / (sy * ny)
        clamped = _clamp_box(cx_n, cy_n, w_n, h_n)
        if clamped is None:
            continue
        ccx, ccy, cw, ch = clamped
        if cw * nx < MIN_BOX_PIXELS or ch * ny < MIN_BOX_PIXELS:
            continue
        out.append((z, YoloLabelRecord(NODULE_CLASS_ID, ccx, ccy, cw, ch)))
    return out


def write_yolo_labels(records, out_path):
    """One `class cx cy w h` line per record, 6-decimal fixed point."""
    with open(out_path, "w", encoding="ascii") as fh:
        for rec in records:
            fh.write(f"{rec.class_id} {rec.cx:.6f} {rec.cy:.6f} {rec.w:.6f} {rec.h:.6f}\n")


def read_yolo_labels(path):
    records = []
    with open(path, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise LabelError(f"{path}: line {line_no}: expected 5 fields, got {len(parts)}")
            records.append(YoloLabelRecord(int(parts[0]), *(float(p) for p in parts[1:])))
    return records


def save_slice_png(slice2d, path):
    """Write a normalized [0, 1] slice as 8-bit grayscale PNG."""
    arr = np.asarray(slice2d, dtype=np.float32)
    if arr.ndim != 2:
        raise LabelError("slice must be 2D")
    pixels = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(path)


def load_slice_png(path):
    """Read an 8-bit grayscale PNG back into a float [0, 1] array."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float32)
    return arr / 255.0
