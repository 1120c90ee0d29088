"""Synthetic chest phantoms with exact ground truth.

A phantom is a cube of HU intensities: a mid-intensity body ellipsoid in
air, two low-intensity lung ellipsoids inside it (their union is the lung
mask), and high-contrast nodule spheres placed inside the lungs. Malignant
nodules are larger with a spiculated surface, benign ones small and smooth.
A configurable fraction of nodules sits adjacent to the lung boundary,
which is a known hard case for detection. Everything is deterministic in
the seed.
"""

import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..volume import CtVolume, LungMask
from .annotations import BENIGN, MALIGNANT, NoduleAnnotation, parse_annotations, \
    write_annotations
from .metaimage import load_metaimage, save_metaimage

# Lung ellipsoid layout as fractions of cube size, (z, y, x).
_LUNG_SEMI_AXES = (0.32, 0.25, 0.15)
_LUNG_CENTERS = ((0.50, 0.48, 0.30), (0.50, 0.48, 0.70))
_BODY_SEMI_AXES = (0.44, 0.40, 0.44)
_BODY_CENTER = (0.50, 0.50, 0.50)

_SPICULE_DIRECTIONS = 8
_SPICULE_SHARPNESS = 6


class PhantomPlacementError(RuntimeError):
    """Requested nodules cannot be placed without overlap."""


@dataclass(frozen=True)
class PhantomSpec:
    """Parameters of one synthetic phantom.

    Radii are in mm (phantoms use 1 mm isotropic spacing). HU levels must
    keep nodules brighter than lung parenchyma so detection stays posed.
    """

    seed: int = 0
    cube_size: int = 64
    nodule_count: int = 4
    malignant_fraction: float = 0.5
    near_surface_fraction: float = 0.2
    air_hu: float = -1000.0
    body_hu: float = 40.0
    lung_hu: float = -850.0
    nodule_hu: float = 80.0
    noise_hu: float = 15.0
    benign_radius_mm: tuple = (1.8, 2.8)
    malignant_radius_mm: tuple = (3.2, 4.2)
    spicule_amplitude: float = 0.25

    def __post_init__(self):
        if self.cube_size < 32:
            raise ValueError(f"cube_size must be >= 32, got {self.cube_size}")
        if self.nodule_count < 0:
            raise ValueError("nodule_count must be >= 0")
        if self.nodule_hu <= self.lung_hu:
            raise ValueError("nodule_hu must exceed lung_hu (no contrast separation)")
        if not 0.0 <= self.malignant_fraction <= 1.0:
            raise ValueError("malignant_fraction must lie in [0, 1]")
        if not 0.0 <= self.near_surface_fraction <= 1.0:
            raise ValueError("near_surface_fraction must lie in [0, 1]")


def lung_ellipsoid_volume_mm3(cube_size):
    """Analytic 4/3*pi*abc volume of ONE lung ellipsoid at this cube size."""
    a, b, c = (f * cube_size for f in _LUNG_SEMI_AXES)
    return 4.0 / 3.0 * np.pi * a * b * c


def _ellipsoid_mask(shape, center, semi_axes):
    zz, yy, xx = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij")
    q = ((zz - center[0]) / semi_axes[0]) ** 2 \
        + ((yy - center[1]) / semi_axes[1]) ** 2 \
        + ((xx - center[2]) / semi_axes[2]) ** 2
    return q <= 1.0


def _spicule_profile(rng):
    dirs = rng.normal(size=(_SPICULE_DIRECTIONS, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    def profile(offsets, dist):
        # bump in [0, 1] per voxel direction; spikes along random lobes
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = offsets / np.maximum(dist, 1e-9)[..., None]
        dots = np.maximum(unit @ dirs.T, 0.0)
        return (dots ** _SPICULE_SHARPNESS).max(axis=-1)

    return profile


def _nodule_voxels(shape, center, radius, spicule_amp, rng):
    r_out = radius * (1.0 + spicule_amp)
    lo = np.maximum(np.floor(np.asarray(center) - r_out - 1).astype(int), 0)
    hi = np.minimum(np.ceil(np.asarray(center) + r_out + 2).astype(int), shape)
    zz, yy, xx = np.meshgrid(*(np.arange(l, h, dtype=np.float64)
                               for l, h in zip(lo, hi)), indexing="ij")
    offsets = np.stack([zz - center[0], yy - center[1], xx - center[2]], axis=-1)
    dist = np.linalg.norm(offsets, axis=-1)
    if spicule_amp > 0.0:
        bump = _spicule_profile(rng)(offsets, dist)
        local_r = radius * (1.0 + spicule_amp * bump)
    else:
        local_r = radius
    inside = dist <= local_r
    box = tuple(slice(l, h) for l, h in zip(lo, hi))
    return box, inside


def generate_phantom(spec):
    """Build (CtVolume, LungMask, annotations) from a PhantomSpec.

    Bit-identical for equal seeds. Raises PhantomPlacementError when the
    requested nodule count cannot be placed without overlap.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.cube_size
    shape = (n, n, n)

    body = _ellipsoid_mask(shape, tuple(f * n for f in _BODY_CENTER),
                           tuple(f * n for f in _BODY_SEMI_AXES))
    lungs = np.zeros(shape, dtype=bool)
    for center in _LUNG_CENTERS:
        lungs |= _ellipsoid_mask(shape, tuple(f * n for f in center),
                                 tuple(f * n for f in _LUNG_SEMI_AXES))

    hu = np.full(shape, spec.air_hu, dtype=np.float64)
    hu[body] = spec.body_hu
    hu[lungs] = spec.lung_hu

    # placement bands come from the exact euclidean distance to the mask edge
    edt = ndimage.distance_transform_edt(lungs)

    labels = [MALIGNANT] * int(round(spec.malignant_fraction * spec.nodule_count))
    labels += [BENIGN] * (spec.nodule_count - len(labels))
    rng.shuffle(labels)
    near_surface = np.zeros(spec.nodule_count, dtype=bool)
    near_surface[:int(round(spec.near_surface_fraction * spec.nodule_count))] = True
    rng.shuffle(near_surface)

    origin = (-(n / 2.0), -(n / 2.0), -(n / 2.0))
    placed = []  # (center, effective radius)
    annotations = []
    for i, label in enumerate(labels):
        malignant = label == MALIGNANT
        lo_r, hi_r = spec.malignant_radius_mm if malignant else spec.benign_radius_mm
        radius = float(rng.uniform(lo_r, hi_r))
        amp = spec.spicule_amplitude if malignant else 0.0
        r_eff = radius * (1.0 + amp)

        if near_surface[i]:
            band = (edt >= r_eff + 1.0) & (edt < r_eff + 2.0)
        else:
            band = edt >= r_eff + 3.0
        candidates = np.argwhere(band)
        placed_center = None
        for _ in range(200):
            if candidates.size == 0:
                break
            pick = candidates[rng.integers(len(candidates))]
            center = pick + rng.uniform(-0.25, 0.25, size=3)
            if all(np.linalg.norm(center - c) >= r_eff + r_prev + 2.0
                   for c, r_prev in placed):
                placed_center = center
                break
        if placed_center is None:
            raise PhantomPlacementError(
                f"could not place nodule {i + 1}/{spec.nodule_count} "
                f"(label={label}, r={radius:.2f})")

        box, inside = _nodule_voxels(shape, placed_center, radius, amp, rng)
        hu[box][inside] = spec.nodule_hu
        placed.append((placed_center, r_eff))
        world = tuple(float(o + c) for o, c in zip(origin, placed_center))
        annotations.append(NoduleAnnotation(
            series_id=f"phantom-{spec.seed}",
            center_world=world,
            diameter_mm=2.0 * radius,
            malignancy=label,
        ))

    hu += rng.normal(0.0, spec.noise_hu, size=shape)
    volume = CtVolume(hu.astype(np.float32), (1.0, 1.0, 1.0), origin, normalized=False)
    mask = LungMask(lungs.astype(np.uint8), (1.0, 1.0, 1.0), origin)
    return volume, mask, annotations


def write_phantom_bundle(out_dir, spec):
    """Generate a phantom and persist it as a bundle directory.

    Layout: volume.mhd/.raw (MET_SHORT HU), mask.mhd/.raw (MET_UCHAR),
    annotations.csv, manifest.json echoing the spec and seed.
    """
    volume, mask, annotations = generate_phantom(spec)
    os.makedirs(out_dir, exist_ok=True)
    save_metaimage(os.path.join(out_dir, "volume.mhd"), volume.voxels,
                   volume.spacing, volume.origin, element_type="MET_SHORT")
    save_metaimage(os.path.join(out_dir, "mask.mhd"), mask.voxels,
                   mask.spacing, mask.origin, element_type="MET_UCHAR")
    write_annotations(os.path.join(out_dir, "annotations.csv"), annotations)
    manifest = {"kind": "phantom-bundle", "spec": dataclasses.asdict(spec)}
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return volume, mask, annotations


def read_phantom_bundle(bundle_dir):
    """Load a bundle back as (CtVolume, LungMask, annotations)."""
    volume = load_metaimage(os.path.join(bundle_dir, "volume.mhd"))
    raw_mask = load_metaimage(os.path.join(bundle_dir, "mask.mhd"))
    mask = LungMask((raw_mask.voxels > 0).astype(np.uint8), raw_mask.spacing, raw_mask.origin)
    annotations = parse_annotations(os.path.join(bundle_dir, "annotations.csv"))
    return volume, mask, annotations
