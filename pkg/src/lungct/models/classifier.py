"""Benign/malignant patch classifier with class-balanced batching."""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator

from ..config import cls_train_defaults
from ..data.annotations import BENIGN, MALIGNANT
from . import _common
from .vit import ViTConfig, VisionTransformer

CLASS_NAMES = (BENIGN, MALIGNANT)  # index 0 / 1 everywhere


@dataclass(frozen=True)
class ClassifierOutput:
    probabilities: tuple  # (p_benign, p_malignant), sums to 1
    label: str
    logits: tuple

    def __post_init__(self):
        total = sum(self.probabilities)
        if abs(total - 1.0) > 1e-6 or min(self.probabilities) < 0:
            raise ValueError(f"probabilities must be a distribution, got {self.probabilities}")


def encode_labels(labels):
    """benign/malignant strings (or 0/1 ints) -> int array in {0, 1}."""
    out = []
    for lab in labels:
        if isinstance(lab, str):
            if lab not in CLASS_NAMES:
                raise ValueError(f"unknown label {lab!r}")
            out.append(CLASS_NAMES.index(lab))
        else:
            lab = int(lab)
            if lab not in (0, 1):
                raise ValueError(f"integer labels must be 0/1, got {lab}")
            out.append(lab)
    return np.asarray(out, dtype=np.int64)


def balanced_batches(labels, batch_size, seed):
    """Yield index batches with exactly batch_size/2 of each class.

    The majority class is shuffled without replacement and consumed once per
    epoch; the minority class is oversampled with replacement to keep every
    batch balanced (a plain permutation when the classes are equal).
    """
    labels = np.asarray(labels)
    if batch_size % 2 != 0:
        raise ValueError(f"batch_size must be even, got {batch_size}")
    half = batch_size // 2
    idx0 = np.flatnonzero(labels == 0)
    idx1 = np.flatnonzero(labels == 1)
    if len(idx0) == 0 or len(idx1) == 0:
        raise ValueError("both classes must be present")
    rng = np.random.default_rng(seed)
    majority, minority = (idx0, idx1) if len(idx0) >= len(idx1) else (idx1, idx0)
    n_batches = max(1, len(majority) // half)
    needed = n_batches * half
    maj = rng.permutation(majority)[:needed]
    if needed > len(majority):  # majority smaller than one half-batch
        maj = rng.choice(majority, size=needed, replace=True)
    if len(minority) == needed:
        mino = rng.permutation(minority)
    else:
        mino = rng.choice(minority, size=needed, replace=True)
    for k in range(n_batches):
        batch = np.concatenate([maj[k * half:(k + 1) * half],
                                mino[k * half:(k + 1) * half]])
        yield rng.permutation(batch)


class NoduleClassifier(BaseEstimator):
    """fit/predict malignancy classifier over 64x64 patches in [0, 1].

    Defaults follow the full-scale settings: batch 256, lr 1e-4, 60 epochs,
    Adam, categorical cross-entropy, patch size 8, balanced batches, 10%
    validation holdout, best checkpoint by validation accuracy.
    """

    def __init__(self, image_size=64, patch_size=8, projection_dim=64,
                 encoder_blocks=8, attention_heads=4, mlp_hidden=(64, 128),
                 head_hidden=(2048, 1024), dropout=0.1, train=None,
                 random_state=0):
        self.image_size = image_size
        self.patch_size = patch_size
        self.projection_dim = projection_dim
        self.encoder_blocks = encoder_blocks
        self.attention_heads = attention_heads
        self.mlp_hidden = mlp_hidden
        self.head_hidden = head_hidden
        self.dropout = dropout
        self.train = train
        self.random_state = random_state

    def _net_config(self):
        return ViTConfig(image_size=self.image_size, patch_size=self.patch_size,
                         projection_dim=self.projection_dim,
                         encoder_blocks=self.encoder_blocks,
                         attention_heads=self.attention_heads,
                         mlp_hidden=tuple(self.mlp_hidden),
                         head_hidden=tuple(self.head_hidden),
                         class_count=len(CLASS_NAMES), dropout=self.dropout)

    def _train_config(self):
        return self.train if self.train is not None else cls_train_defaults()

    def _as_tensor(self, patches):
        arr = np.asarray(patches, dtype=np.float32)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[1:] != (self.image_size,) * 2:
            raise ValueError(f"patches must be (n, {self.image_size}, {self.image_size}), "
                             f"got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("patch values must lie in [0, 1]")
        return torch.from_numpy(arr.copy())

    def fit(self, patches, labels):
        x = self._as_tensor(patches)
        y = encode_labels(labels)
        if len(y) != x.shape[0]:
            raise ValueError(f"{x.shape[0]} patches vs {len(y)} labels")
        if len(np.unique(y)) < 2:
            raise ValueError("both classes must be present in the training set")
        cfg = self._train_config()
        rng = _common.seed_everything(self.random_state)

        train_idx, val_idx = _common.holdout_split(len(y), cfg.val_fraction, rng)
        if len(train_idx) == 0 or len(np.unique(y[train_idx])) < 2:
            raise ValueError("validation holdout leaves a single-class training set")

        self.module_ = VisionTransformer(self._net_config())
        optimizer = torch.optim.Adam(self.module_.parameters(), lr=cfg.learning_rate)
        y_t = torch.from_numpy(y)

        monitor_idx = val_idx if len(val_idx) else train_idx
        best_metric, best_state, best_epoch = -1.0, None, -1
        history = []
        step = 0
        done = False
        for epoch in range(cfg.epochs):
            self.module_.train()
            epoch_losses = []
            epoch_seed = int(np.random.default_rng((self.random_state, epoch)).integers(2 ** 31))
            for batch_rel in balanced_batches(y[train_idx], cfg.batch_size, epoch_seed):
                batch = train_idx[batch_rel]
                optimizer.zero_grad()
                logits = self.module_(x[batch])
                loss = F.cross_entropy(logits, y_t[batch])
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
            metric = self._accuracy(x[monitor_idx], y[monitor_idx])
            history.append({
                "epoch": epoch,
                "steps": step,
                "train_loss": float(np.mean(epoch_losses)) if epoch_losses else None,
                ("val_accuracy" if len(val_idx) else "train_accuracy"): metric,
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

    def _accuracy(self, x, y):
        self.module_.eval()
        with torch.no_grad():
            pred = self.module_(x).argmax(dim=1).numpy()
        return float(np.mean(pred == y))

    def decision_function(self, patches):
        """Raw class logits, (n, 2)."""
        self._check_fitted()
        self.module_.eval()
        with torch.no_grad():
            return self.module_(self._as_tensor(patches)).numpy()

    def predict_proba(self, patches):
        logits = torch.from_numpy(self.decision_function(patches))
        return torch.softmax(logits, dim=1).numpy()

    def predict(self, patches):
        """String labels, one per patch."""
        proba = self.predict_proba(patches)
        return np.array([CLASS_NAMES[i] for i in proba.argmax(axis=1)])

    def score(self, patches, labels):
        return float(np.mean(self.predict(patches) == np.asarray(
            [CLASS_NAMES[i] for i in encode_labels(labels)])))

    def save(self, path):
        self._check_fitted()
        params = self.get_params()
        train = params.pop("train")
        meta = {
            "estimator": "NoduleClassifier",
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
        if meta.get("estimator") != "NoduleClassifier":
            raise ValueError(f"{path} is not a NoduleClassifier checkpoint")
        params = dict(meta["params"])
        params["mlp_hidden"] = tuple(params["mlp_hidden"])
        params["head_hidden"] = tuple(params["head_hidden"])
        est = cls(train=_common.train_config_from_meta(meta), **params)
        est.module_ = VisionTransformer(est._net_config())
        est.module_.load_state_dict(state)
        est.module_.eval()
        est.history_ = meta.get("history", [])
        est.best_metric_ = meta.get("best_metric")
        est.best_epoch_ = meta.get("best_epoch")
        est.steps_run_ = meta.get("steps_run")
        return est


def classify(patch, classifier):
    """Run a fitted NoduleClassifier on one NodulePatch or 64x64 array."""
    pixels = patch.pixels if hasattr(patch, "pixels") else patch
    logits = classifier.decision_function(pixels)[0]
    proba = np.exp(logits - logits.max())
    proba = proba / proba.sum()
    return ClassifierOutput(probabilities=tuple(float(p) for p in proba),
                            label=CLASS_NAMES[int(proba.argmax())],
                            logits=tuple(float(v) for v in logits))
