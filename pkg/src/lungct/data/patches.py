"""64x64 classifier patches cropped around annotated nodule centers."""

from dataclasses import dataclass

import numpy as np

from ..volume import world_to_voxel
from .annotations import BENIGN, MALIGNANT

PATCH_SIZE = 64


class PatchError(ValueError):
    pass


@dataclass(frozen=True)
class NodulePatch:
    """A 64x64 normalized-intensity crop plus its label and provenance."""

    pixels: np.ndarray
    label: str
    source: tuple  # (series_id, annotation index)

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float32)
        if arr.shape != (PATCH_SIZE, PATCH_SIZE):
            raise PatchError(f"patch must be {PATCH_SIZE}x{PATCH_SIZE}, got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise PatchError("patch values must lie in [0, 1]")
        if self.label not in (BENIGN, MALIGNANT):
            raise PatchError(f"label must be benign/malignant, got {self.label!r}")
        object.__setattr__(self, "pixels", arr)


def crop_patch_at(plane, center_y, center_x, size=PATCH_SIZE):
    """Crop a size x size window centered on (center_y, center_x), zero-padding
    wherever the window hangs off the plane so the center stays centered."""
    plane = np.asarray(plane, dtype=np.float32)
    cy = int(round(float(center_y)))
    cx = int(round(float(center_x)))
    half = size // 2
    out = np.zeros((size, size), dtype=np.float32)
    y0, x0 = cy - half, cx - half
    src_y0, src_x0 = max(y0, 0), max(x0, 0)
    src_y1 = min(y0 + size, plane.shape[0])
    src_x1 = min(x0 + size, plane.shape[1])
    if src_y1 > src_y0 and src_x1 > src_x0:
        out[src_y0 - y0:src_y1 - y0, src_x0 - x0:src_x1 - x0] = plane[src_y0:src_y1,
                                                                      src_x0:src_x1]
    return out


def extract_classifier_patch(volume, annotation, annotation_index=0):
    """Cut the nodule's central axial slice into a centered 64x64 patch.

    The volume must be normalized; the annotation center must lie inside it.
    """
    if not volume.normalized:
        raise PatchError("classifier patches require a normalized volume")
    if annotation.malignancy is None:
        raise PatchError("classifier patches need a benign/malignant label")
    vz, vy, vx = world_to_voxel(annotation.center_world, volume)
    z = int(np.clip(round(vz), 0, volume.shape[0] - 1))
    pixels = crop_patch_at(volume.voxels[z], vy, vx)
    return NodulePatch(pixels, annotation.malignancy,
                       (annotation.series_id, annotation_index))


def save_patch_bundle(path, patches):
    """Persist patches as one .npz (pixels stack, labels, sources)."""
    pixels = np.stack([p.pixels for p in patches]) if patches else \
        np.zeros((0, PATCH_SIZE, PATCH_SIZE), dtype=np.float32)
    labels = np.array([p.label for p in patches], dtype="U9")
    series = np.array([p.source[0] for p in patches], dtype="U64")
    indices = np.array([p.source[1] for p in patches], dtype=np.int64)
    np.savez(path, pixels=pixels, labels=labels, series=series, indices=indices)


def load_patch_bundle(path):
    data = np.load(path, allow_pickle=False)
    return [NodulePatch(px, str(lb), (str(sr), int(ix)))
            for px, lb, sr, ix in zip(data["pixels"], data["labels"],
                                      data["series"], data["indices"])]
