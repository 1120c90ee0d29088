"""Shared estimator plumbing: seeding, holdouts, checkpoint files."""

import copy
import json
import os

import numpy as np
import torch

from .. import __version__
from ..config import TrainConfig


def seed_everything(seed):
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def holdout_split(n, val_fraction, rng):
    """Deterministic train/validation index split; val may be empty when the
    rounded count is zero (tiny desk-scale datasets train on everything)."""
    n_val = int(round(val_fraction * n))
    order = rng.permutation(n)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def clone_state(module):
    return copy.deepcopy(module.state_dict())


def checkpoint_paths(path):
    path = str(path)
    weights = path if path.endswith(".pt") else path + ".pt"
    return weights, weights[:-3] + ".json"


def save_checkpoint(path, module, meta):
    weights_path, meta_path = checkpoint_paths(path)
    os.makedirs(os.path.dirname(os.path.abspath(weights_path)), exist_ok=True)
    torch.save(module.state_dict(), weights_path)
    meta = dict(meta)
    meta["package_version"] = __version__
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    weights_path, meta_path = checkpoint_paths(path)
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    state = torch.load(weights_path, map_location="cpu", weights_only=True)
    return state, meta


def train_config_from_meta(meta):
    data = meta.get("train")
    return TrainConfig.from_dict(data) if data else None
