"""Trainable lung segmentation estimator wrapping the 3D U-Net variants."""

import numpy as np
import torch
from scipy import ndimage
from sklearn.base import BaseEstimator

from ..config import seg_train_defaults
from ..metrics import dice_score
from ..volume import LungMask
from . import _common
from .unet3d import SegNetConfig, UNet3d, dice_loss


class LungSegmenter(BaseEstimator):
    """fit/predict segmenter over normalized volumetric grids.

    fit(volumes, masks) expects same-shaped cubes: volumes in [0, 1] and
    binary masks. predict thresholds the sigmoid output and keeps only the
    two largest connected components (left/right lungs).

    Parameters mirror SegNetConfig plus the training record; `train=None`
    uses the full-scale defaults (batch 4, lr 1e-4, 60 epochs, Adam, dice
    loss, 10% validation holdout).
    """

    def __init__(self, variant="residual", input_cube=256,
                 filter_schedule=(24, 48, 96, 192), residual_subunits=4,
                 out_channels=1, threshold=0.5, keep_components=2,
                 train=None, random_state=0):
        self.variant = variant
        self.input_cube = input_cube
        self.filter_schedule = filter_schedule
        self.residual_subunits = residual_subunits
        self.out_channels = out_channels
        self.threshold = threshold
        self.keep_components = keep_components
        self.train = train
        self.random_state = random_state

    def _net_config(self):
        return SegNetConfig(input_cube=self.input_cube,
                            filter_schedule=tuple(self.filter_schedule),
                            residual_subunits=self.residual_subunits,
                            out_channels=self.out_channels,
                            variant=self.variant)

    def _train_config(self):
        return self.train if self.train is not None else seg_train_defaults()

    def _as_batch(self, arrays, name, binary=False):
        cube = (self.input_cube,) * 3
        out = []
        for i, arr in enumerate(arrays):
            arr = np.asarray(arr, dtype=np.float32)
            if arr.shape != cube:
                raise ValueError(f"{name}[{i}] has shape {arr.shape}, expected {cube}")
            if binary and not np.isin(np.unique(arr), (0, 1)).all():
                raise ValueError(f"{name}[{i}] must be binary")
            out.append(arr.copy())
        return torch.from_numpy(np.stack(out)).unsqueeze(1)

    def fit(self, volumes, masks):
        volumes = list(volumes)
        masks = list(masks)
        if not volumes:
            raise ValueError("empty dataset")
        if len(volumes) != len(masks):
            raise ValueError(f"{len(volumes)} volumes vs {len(masks)} masks")
        cfg = self._train_config()
        rng = _common.seed_everything(self.random_state)

        x = self._as_batch(volumes, "volumes")
        y = self._as_batch(masks, "masks", binary=True)
        train_idx, val_idx = _common.holdout_split(len(volumes), cfg.val_fraction, rng)
        if len(train_idx) == 0:
            raise ValueError("validation holdout leaves no training volumes")

        self.module_ = UNet3d(self._net_config())
        optimizer = torch.optim.Adam(self.module_.parameters(), lr=cfg.learning_rate)

        monitor_idx = val_idx if len(val_idx) else train_idx
        best_metric, best_state, best_epoch = -1.0, None, -1
        history = []
        step = 0
        done = False
        for epoch in range(cfg.epochs):
            self.module_.train()
            order = rng.permutation(len(train_idx))
            epoch_losses = []
            for start in range(0, len(order), cfg.batch_size):
                batch = train_idx[order[start:start + cfg.batch_size]]
                optimizer.zero_grad()
                pred = self.module_(x[batch])
                loss = dice_loss(pred, y[batch])
                if not torch.isfinite(loss):
                    raise RuntimeError(
                        f"non-finite loss at step {step} (lr={cfg.learning_rate})")
                loss.backward()
                optimizer.step()
                epoch_losses.append(float(loss.detach()))
                step += 1
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    done = True
                    break
            metric = self._mean_dice(x[monitor_idx], y[monitor_idx])
            history.append({
                "epoch": epoch,
                "steps": step,
                "train_loss": float(np.mean(epoch_losses)) if epoch_losses else None,
                ("val_dice" if len(val_idx) else "train_dice"): metric,
            })
            if metric > best_metric:
                best_metric = metric
                best_state = _common.clone_state(self.module_)
                best_epoch = epoch
            if cfg.stop_at_metric is not None and metric >= cfg.stop_at_metric:
                done = True
            if done:
                break

        if best_state is not None:
            self.module_.load_state_dict(best_state)
        self.module_.eval()
        self.history_ = history
        self.best_metric_ = best_metric
        self.best_epoch_ = best_epoch
        self.steps_run_ = step
        return self

    def _check_fitted(self):
        if not hasattr(self, "module_"):
            raise RuntimeError("estimator is not fitted; call fit() or load()")

    def _forward(self, volume):
        volume = np.asarray(volume, dtype=np.float32)
        if volume.shape != (self.input_cube,) * 3:
            raise ValueError(
                f"volume shape {volume.shape} does not match checkpoint cube "
                f"{(self.input_cube,) * 3}")
        with torch.no_grad():
            tensor = torch.from_numpy(volume.copy())[None, None]
            return self.module_(tensor)[0, 0].numpy()

    def _mean_dice(self, x, y):
        self.module_.eval()
        scores = []
        with torch.no_grad():
            for i in range(x.shape[0]):
                prob = self.module_(x[i:i + 1])[0, 0].numpy()
                scores.append(dice_score(prob >= self.threshold,
                                         y[i, 0].numpy() > 0.5))
        return float(np.mean(scores)) if scores else -1.0

    def predict_proba(self, volume):
        """Sigmoid probability grid for one (cube, cube, cube) array."""
        self._check_fitted()
        return self._forward(volume)

    def predict(self, volume):
        """Thresholded mask with only the `keep_components` largest
        connected components retained."""
        prob = self.predict_proba(volume)
        binary = prob >= self.threshold
        return keep_largest_components(binary, self.keep_components)

    def score(self, volumes, masks):
        """Mean Dice of predictions against reference masks."""
        return float(np.mean([dice_score(self.predict(v), np.asarray(m) > 0.5)
                              for v, m in zip(volumes, masks)]))

    def save(self, path):
        self._check_fitted()
        params = self.get_params()
        train = params.pop("train")
        meta = {
            "estimator": "LungSegmenter",
            "params": params,
            "train": (train or self._train_config()).to_dict(),
            "history": self.history_,
            "best_metric": self.best_metric_,
            "best_epoch": self.best_epoch_,
            "steps_run": self.steps_run_,
        }
        _common.save_checkpoint(path, self.module_, meta)

    @classmethod
    def load(cls, path):
        state, meta = _common.load_checkpoint(path)
        if meta.get("estimator") != "LungSegmenter":
            raise ValueError(f"{path} is not a LungSegmenter checkpoint")
        params = dict(meta["params"])
        params["filter_schedule"] = tuple(params["filter_schedule"])
        est = cls(train=_common.train_config_from_meta(meta), **params)
        est.module_ = UNet3d(est._net_config())
        est.module_.load_state_dict(state)
        est.module_.eval()
        est.history_ = meta.get("history", [])
        est.best_metric_ = meta.get("best_metric")
        est.best_epoch_ = meta.get("best_epoch")
        est.steps_run_ = meta.get("steps_run")
        return est


def keep_largest_components(binary, keep=2):
    """Retain the `keep` largest connected components of a boolean grid."""
    binary = np.asarray(binary).astype(bool)
    labels, count = ndimage.label(binary)
    if count <= keep:
        return binary.astype(np.uint8)
    sizes = ndimage.sum_labels(binary, labels, index=np.arange(1, count + 1))
    keep_ids = np.argsort(sizes)[::-1][:keep] + 1
    return np.isin(labels, keep_ids).astype(np.uint8)


def segment(volume, segmenter, threshold=None):
    """Run a fitted LungSegmenter on a CtVolume and wrap the result.

    The volume must be normalized and already resampled to the checkpoint's
    input cube.
    """
    if not volume.normalized:
        raise ValueError("segment() expects a normalized volume")
    thr = segmenter.threshold if threshold is None else threshold
    prob = segmenter.predict_proba(volume.voxels)
    mask = keep_largest_components(prob >= thr, segmenter.keep_components)
    return LungMask(mask, volume.spacing, volume.origin)
