"""Deterministic train/val/test partitioning."""

import numpy as np


def split_dataset(items, fractions, seed):
    """Shuffle by seed and partition into len(fractions) disjoint lists.

    Fractions must sum to 1; sizes are assigned by cumulative rounding so the
    partition is exhaustive. Raises when there are fewer items than
    partitions.
    """
    items = list(items)
    fractions = [float(f) for f in fractions]
    if any(f < 0 for f in fractions):
        raise ValueError(f"fractions must be >= 0, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    if len(items) < len(fractions):
        raise ValueError(f"{len(items)} items cannot fill {len(fractions)} partitions")

    order = np.random.default_rng(seed).permutation(len(items))
    cuts = [int(round(sum(fractions[:k + 1]) * len(items)))
            for k in range(len(fractions) - 1)]
    bounds = [0] + cuts + [len(items)]
    parts = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        parts.append([items[i] for i in order[lo:hi]])
    return tuple(parts)
