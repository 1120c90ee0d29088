"""Input validation helpers shared across the package.

Conventions: all grids are numpy arrays in (z, y, x) axis order, all
world-space vectors are (z, y, x) millimetres.
"""

import numpy as np


def as_float_volume(voxels, name="voxels"):
    """Coerce to a 3D float32 array with every axis >= 1."""
    arr = np.asarray(voxels, dtype=np.float32)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be 3D (z, y, x), got ndim={arr.ndim}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name} has a degenerate axis: shape={arr.shape}")
    return arr


def as_binary_grid(voxels, name="mask"):
    """Coerce to a 3D uint8 array and reject values outside {0, 1}."""
    arr = np.asarray(voxels)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be 3D (z, y, x), got ndim={arr.ndim}")
    uniq = np.unique(arr)
    if not np.isin(uniq, (0, 1)).all():
        raise ValueError(f"{name} must be binary, found values {uniq[:8]}")
    return arr.astype(np.uint8)


def as_vec3(value, name, positive=False):
    """Coerce to a float (z, y, x) 3-tuple, optionally strictly positive."""
    vec = tuple(float(v) for v in np.asarray(value, dtype=np.float64).ravel())
    if len(vec) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(vec)}")
    if positive and any(v <= 0 for v in vec):
        raise ValueError(f"{name} components must be > 0, got {vec}")
    return vec


def check_same_shape(a, b, what="arrays"):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"{what} shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def check_probability_grid(arr, name="pred"):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_fraction(value, name):
    value = float(value)
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")
    return value
