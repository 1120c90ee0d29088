"""Geometry-aware CT volume primitives.

A volume is a 3D scalar grid in (z, y, x) axis order with per-axis spacing
in mm/voxel and a world origin in mm (the world position of voxel (0,0,0)).
Intensities are Hounsfield units until `clip_and_normalize_hu` maps them
into [0, 1].
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .validation import as_binary_grid, as_float_volume, as_vec3, check_same_shape

# Lung parenchyma attenuation window, HU.
HU_WINDOW = (-1200.0, 600.0)

CANONICAL_CUBE = 256          # full-scale default; desk-scale runs use 64 or 32
CANONICAL_SPACING_MM = 1.0


class OutOfBoundsError(ValueError):
    """World/voxel coordinate outside the grid; carries the offending axis."""

    def __init__(self, axis, value, bound):
        self.axis = axis
        super().__init__(f"coordinate outside grid on axis {axis!r}: {value} (valid up to {bound})")


class EmptyMaskError(ValueError):
    """Mask has no foreground voxels where foreground is required."""


@dataclass(eq=False)
class CtVolume:
    """3D scalar grid plus geometry.

    Attributes
    ----------
    voxels : np.ndarray
        (z, y, x) float32 grid. HU before normalization, [0, 1] after.
    spacing : tuple of float
        mm per voxel, (z, y, x); strictly positive.
    origin : tuple of float
        world mm of voxel (0, 0, 0), (z, y, x).
    normalized : bool
        True once intensities have been windowed and min-max mapped.
    """

    voxels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)
    normalized: bool = False

    def __post_init__(self):
        self.voxels = as_float_volume(self.voxels)
        self.spacing = as_vec3(self.spacing, "spacing", positive=True)
        self.origin = as_vec3(self.origin, "origin")
        if self.normalized:
            lo, hi = float(self.voxels.min()), float(self.voxels.max())
            if lo < 0.0 or hi > 1.0:
                raise ValueError(f"normalized volume has values outside [0, 1]: [{lo}, {hi}]")

    @property
    def shape(self):
        return self.voxels.shape

    @property
    def extent_mm(self):
        """World extent per axis (z, y, x): size * spacing."""
        return tuple(n * s for n, s in zip(self.voxels.shape, self.spacing))


@dataclass(eq=False)
class LungMask:
    """Binary 3D grid geometrically aligned with its parent CtVolume."""

    voxels: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.voxels = as_binary_grid(self.voxels)
        self.spacing = as_vec3(self.spacing, "spacing", positive=True)
        self.origin = as_vec3(self.origin, "origin")

    @property
    def shape(self):
        return self.voxels.shape

    def foreground_count(self):
        return int(self.voxels.sum())


@dataclass(frozen=True)
class CropBox:
    """Half-open (z, y, x) index box recorded by `crop_foreground`."""

    lo: tuple
    hi: tuple

    @property
    def shape(self):
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    def slices(self):
        return tuple(slice(l, h) for l, h in zip(self.lo, self.hi))


def clip_and_normalize_hu(volume, window=HU_WINDOW):
    """Clip HU to the lung window and min-max map it onto [0, 1].

    The window floor maps to 0.0 and the ceiling to 1.0 exactly; the map is
    monotone. Geometry is unchanged. Raises on an already-normalized volume
    so accidental double normalization is caught.
    """
    if volume.normalized:
        raise ValueError("volume is already normalized; refusing to normalize twice")
    lo, hi = float(window[0]), float(window[1])
    if hi <= lo:
        raise ValueError(f"window must satisfy hi > lo, got {window}")
    clipped = np.clip(volume.voxels, lo, hi)
    scaled = (clipped - lo) / (hi - lo)
    return CtVolume(scaled.astype(np.float32), volume.spacing, volume.origin, normalized=True)


def binarize_lung_mask(raw_mask, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0),
                       lung_labels=(3, 4)):
    """Collapse a multi-label mask to binary: lung labels -> 1, all else -> 0.

    LUNA16-style masks label the left and right lungs 3 and 4 and the
    backdrop with other values; unknown labels fall into background.
    """
    raw = np.asarray(raw_mask)
    if raw.ndim != 3:
        raise ValueError(f"raw mask must be 3D, got ndim={raw.ndim}")
    binary = np.isin(raw, lung_labels).astype(np.uint8)
    return LungMask(binary, spacing, origin)


def _zoom_to_shape(arr, target_shape, order):
    factors = tuple(t / s for t, s in zip(target_shape, arr.shape))
    out = ndimage.zoom(arr, factors, order=order, mode="nearest", grid_mode=True)
    if out.shape != tuple(target_shape):  # zoom rounds; trim/pad the stray voxel
        out = out[tuple(slice(0, t) for t in target_shape)]
        pad = [(0, t - s) for t, s in zip(target_shape, out.shape)]
        if any(p[1] for p in pad):
            out = np.pad(out, pad, mode="edge")
    return out


def resample_to_canonical(volume, mask=None, cube_size=CANONICAL_CUBE):
    """Resample to 1 mm isotropic spacing, then resize to a cube.

    Intensities are interpolated trilinearly, masks nearest-neighbor so they
    stay binary. The recorded output spacing is world extent / cube_size per
    axis, so size*spacing is preserved through both steps (up to the half
    voxel lost to rounding when respacing to 1 mm).
    """
    if mask is not None:
        check_same_shape(volume.voxels, mask.voxels, "volume/mask")
    if int(cube_size) < 2:
        raise ValueError(f"cube_size must be >= 2, got {cube_size}")
    cube_size = int(cube_size)

    for axis, (n, s) in enumerate(zip(volume.shape, volume.spacing)):
        if n == 1 and (s > CANONICAL_SPACING_MM or cube_size > 1):
            warnings.warn(f"axis {axis} has size 1; upsampling replicates the single plane")

    # step 1: isotropic 1 mm grid
    iso_shape = tuple(max(1, int(round(n * s / CANONICAL_SPACING_MM)))
                      for n, s in zip(volume.shape, volume.spacing))
    vox = volume.voxels
    msk = mask.voxels if mask is not None else None
    if iso_shape != volume.shape:
        vox = _zoom_to_shape(vox, iso_shape, order=1)
        if msk is not None:
            msk = _zoom_to_shape(msk, iso_shape, order=0)

    # step 2: canonical cube; spacing becomes extent / cube per axis
    extent = tuple(n * CANONICAL_SPACING_MM for n in iso_shape)
    cube_shape = (cube_size,) * 3
    if cube_shape != tuple(iso_shape):
        vox = _zoom_to_shape(vox, cube_shape, order=1)
        if msk is not None:
            msk = _zoom_to_shape(msk, cube_shape, order=0)
    out_spacing = tuple(e / cube_size for e in extent)

    if volume.normalized:
        vox = np.clip(vox, 0.0, 1.0)
    out_vol = CtVolume(vox, out_spacing, volume.origin, normalized=volume.normalized)
    out_mask = None
    if msk is not None:
        out_mask = LungMask((msk > 0).astype(np.uint8), out_spacing, mask.origin)
    return out_vol, out_mask


def world_to_voxel(world, volume):
    """Map a world (z, y, x) mm point to a continuous voxel index.

    Pure affine: (world - origin) / spacing, no rounding. Points outside the
    voxel-center coverage [-0.5, n - 0.5) raise OutOfBoundsError naming the
    axis.
    """
    world = as_vec3(world, "world")
    idx = np.array([(w - o) / s for w, o, s in zip(world, volume.origin, volume.spacing)])
    for axis, (i, n) in enumerate(zip(idx, volume.shape)):
        if i < -0.5 or i > n - 0.5:
            raise OutOfBoundsError("zyx"[axis], i, n - 0.5)
    return idx


def voxel_to_world(index, volume):
    """Inverse of `world_to_voxel` (no bounds check)."""
    index = np.asarray(index, dtype=np.float64)
    return np.array([o + i * s for i, o, s in zip(index, volume.origin, volume.spacing)])


def crop_foreground(volume, mask, margin=0):
    """Crop volume and mask to the mask's bounding box dilated by `margin`.

    The margin is clamped to the grid. Raises EmptyMaskError on an empty mask
    rather than silently returning the full volume. The returned CropBox maps
    cropped indices back into the parent grid; the cropped origin is shifted
    so world coordinates stay valid.
    """
    check_same_shape(volume.voxels, mask.voxels, "volume/mask")
    if margin < 0:
        raise ValueError(f"margin must be >= 0, got {margin}")
    fg = np.argwhere(mask.voxels > 0)
    if fg.size == 0:
        raise EmptyMaskError("mask has no foreground voxels")
    lo = np.maximum(fg.min(axis=0) - margin, 0)
    hi = np.minimum(fg.max(axis=0) + 1 + margin, volume.shape)
    box = CropBox(tuple(int(v) for v in lo), tuple(int(v) for v in hi))
    sl = box.slices()
    new_origin = tuple(o + l * s for o, l, s in zip(volume.origin, box.lo, volume.spacing))
    cropped_vol = CtVolume(volume.voxels[sl].copy(), volume.spacing, new_origin,
                           normalized=volume.normalized)
    cropped_mask = LungMask(mask.voxels[sl].copy(), mask.spacing, new_origin)
    return cropped_vol, cropped_mask, box


def extract_axial_slice(volume, z):
    """Return the z-th axial plane and its in-plane (y, x) spacing in mm."""
    depth = volume.shape[0]
    if not 0 <= z < depth:
        raise OutOfBoundsError("z", z, depth - 1)
    return volume.voxels[int(z)], (volume.spacing[1], volume.spacing[2])


def pad_to_shape(volume, target_shape, fill=0.0):
    """Center-pad a volume up to target_shape with a constant fill.

    Used to bring per-volume foreground crops to a dataset-wide common shape.
    The origin shifts by the low-side padding so world coordinates stay
    valid.
    """
    pads = []
    for axis, (n, t) in enumerate(zip(volume.shape, target_shape)):
        if t < n:
            raise ValueError(f"target shape {tuple(target_shape)} smaller than "
                             f"volume {volume.shape} on axis {axis}")
        lo = (t - n) // 2
        pads.append((lo, t - n - lo))
    voxels = np.pad(volume.voxels, pads, constant_values=np.float32(fill))
    origin = tuple(o - lo * s
                   for o, (lo, _), s in zip(volume.origin, pads, volume.spacing))
    return CtVolume(voxels, volume.spacing, origin, normalized=volume.normalized)
