"""Trainable nodule detector over 2D axial slices."""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from scipy import ndimage
from sklearn.base import BaseEstimator

from ..config import det_train_defaults
from ..metrics import map_at_50, map_at_50_95
from . import _common
from .yolonet import (DEFAULT_ANCHORS, DetNetConfig, DetectionNet, build_targets,
                      decode_predictions, detection_loss, nms)


@dataclass(frozen=True)
class Detection2D:
    """One detection on an axial slice, normalized to that slice."""

    cx: float
    cy: float
    w: float
    h: float
    score: float
    class_id: int = 0
    slice_index: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        eps = 1e-6
        if self.cx - self.w / 2 < -eps or self.cx + self.w / 2 > 1 + eps \
                or self.cy - self.h / 2 < -eps or self.cy + self.h / 2 > 1 + eps:
            raise ValueError("denormalized box exceeds the image")

    def corners(self):
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)


def letterbox(image, size):
    """Scale-preserving resize onto a size x size canvas, zero padded.

    Returns (canvas, scale, (pad_y, pad_x)); boxes map back through
    x_orig = (x_canvas - pad_x) / scale.
    """
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape
    scale = size / max(h, w)
    new_h = max(1, int(round(h * scale)))
    new_w = max(1, int(round(w * scale)))
    if (new_h, new_w) != (h, w):
        resized = ndimage.zoom(image, (new_h / h, new_w / w), order=1, mode="nearest",
                               grid_mode=True)
        resized = resized[:new_h, :new_w]
    else:
        resized = image
    canvas = np.zeros((size, size), dtype=np.float32)
    pad_y = (size - new_h) // 2
    pad_x = (size - new_w) // 2
    canvas[pad_y:pad_y + new_h, pad_x:pad_x + new_w] = resized
    return canvas, scale, (pad_y, pad_x)


def letterbox_labels(labels, orig_shape, size, scale, pads):
    """Map (M, 5) normalized labels from the original slice onto the canvas."""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1, 5)
    if labels.size == 0:
        return labels
    h, w = orig_shape
    pad_y, pad_x = pads
    out = labels.copy()
    out[:, 1] = (labels[:, 1] * w * scale + pad_x) / size
    out[:, 2] = (labels[:, 2] * h * scale + pad_y) / size
    out[:, 3] = labels[:, 3] * w * scale / size
    out[:, 4] = labels[:, 4] * h * scale / size
    return out


def unletterbox_detections(rows, orig_shape, size, scale, pads):
    """Inverse of `letterbox_labels` for decoded (N, 6) detection rows."""
    rows = np.asarray(rows, dtype=np.float64).reshape(-1, 6)
    if rows.size == 0:
        return rows
    h, w = orig_shape
    pad_y, pad_x = pads
    out = rows.copy()
    out[:, 0] = (rows[:, 0] * size - pad_x) / (w * scale)
    out[:, 1] = (rows[:, 1] * size - pad_y) / (h * scale)
    out[:, 2] = rows[:, 2] * size / (w * scale)
    out[:, 3] = rows[:, 3] * size / (h * scale)
    x1 = np.clip(out[:, 0] - out[:, 2] / 2, 0, 1)
    y1 = np.clip(out[:, 1] - out[:, 3] / 2, 0, 1)
    x2 = np.clip(out[:, 0] + out[:, 2] / 2, 0, 1)
    y2 = np.clip(out[:, 1] + out[:, 3] / 2, 0, 1)
    keep = (x2 > x1) & (y2 > y1)
    out[:, 0] = (x1 + x2) / 2
    out[:, 1] = (y1 + y2) / 2
    out[:, 2] = x2 - x1
    out[:, 3] = y2 - y1
    return out[keep]


class NoduleDetector(BaseEstimator):
    """fit/predict detector over grayscale slices in [0, 1].

    fit(images, labels): images are 2D arrays of any size (letterboxed to
    input_size internally); labels are (M, 5) arrays [class, cx, cy, w, h]
    normalized to their slice. Defaults follow the full-scale settings
    (batch 64, lr 0.01, 600 epochs, Adam); horizontal flip is the only
    augmentation.
    """

    EVAL_CONF = 0.05  # low threshold so PR curves see the full ranking

    def __init__(self, input_size=256, anchors=DEFAULT_ANCHORS, class_count=1,
                 width_mult=0.5, depth_mult=0.33, conf_threshold=0.3,
                 nms_iou=0.45, flip_augment=True, train=None, random_state=0):
        self.input_size = input_size
        self.anchors = anchors
        self.class_count = class_count
        self.width_mult = width_mult
        self.depth_mult = depth_mult
        self.conf_threshold = conf_threshold
        self.nms_iou = nms_iou
        self.flip_augment = flip_augment
        self.train = train
        self.random_state = random_state

    def _net_config(self):
        return DetNetConfig(input_size=self.input_size, class_count=self.class_count,
                            anchors=self.anchors, width_mult=self.width_mult,
                            depth_mult=self.depth_mult,
                            conf_threshold=self.conf_threshold, nms_iou=self.nms_iou)

    def _train_config(self):
        return self.train if self.train is not None else det_train_defaults()

    def _prepare(self, images, labels):
        xs, ys = [], []
        for i, img in enumerate(images):
            img = np.asarray(img, dtype=np.float32)
            if img.ndim != 2:
                raise ValueError(f"images[{i}] must be 2D")
            canvas, scale, pads = letterbox(img, self.input_size)
            xs.append(canvas)
            if labels is not None:
                ys.append(letterbox_labels(labels[i], img.shape, self.input_size,
                                           scale, pads))
        x = torch.from_numpy(np.stack(xs)).unsqueeze(1)
        return x, ys

    def fit(self, images, labels):
        images = list(images)
        labels = [np.asarray(l, dtype=np.float64).reshape(-1, 5) for l in labels]
        if not images:
            raise ValueError("empty dataset")
        if len(images) != len(labels):
            raise ValueError(f"{len(images)} images vs {len(labels)} label sets")
        if sum(len(l) for l in labels) == 0:
            raise ValueError("dataset has no positive labels; refusing to start")
        cfg = self._train_config()
        net_cfg = self._net_config()
        rng = _common.seed_everything(self.random_state)

        x, ys = self._prepare(images, labels)
        train_idx, val_idx = _common.holdout_split(len(images), cfg.val_fraction, rng)
        if len(train_idx) == 0:
            raise ValueError("validation holdout leaves no training slices")

        self.module_ = DetectionNet(net_cfg)
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
                xb = x[batch].clone()
                yb = [ys[i] for i in batch]
                if self.flip_augment:
                    flip = rng.uniform(size=len(batch)) < 0.5
                    for j, do_flip in enumerate(flip):
                        if do_flip:
                            xb[j] = torch.flip(xb[j], dims=[-1])
                            if yb[j].size:
                                flipped = yb[j].copy()
                                flipped[:, 1] = 1.0 - flipped[:, 1]
                                yb[j] = flipped
                targets = build_targets(yb, net_cfg)
                optimizer.zero_grad()
                outs = self.module_(xb)
                box_l, obj_l, cls_l, total = detection_loss(outs, targets, net_cfg)
                if not torch.isfinite(total):
                    raise RuntimeError(
                        f"non-finite loss at step {step} (lr={cfg.learning_rate})")
                total.backward()
                optimizer.step()
                epoch_losses.append([float(box_l.detach()), float(obj_l.detach()),
                                     float(cls_l.detach()), float(total.detach())])
                step += 1
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    done = True
                    break
            metric = self._map50_on(x[monitor_idx], [ys[i] for i in monitor_idx])
            mean_losses = np.mean(epoch_losses, axis=0) if epoch_losses else [None] * 4
            history.append({
                "epoch": epoch,
                "steps": step,
                "box_loss": float(mean_losses[0]) if epoch_losses else None,
                "obj_loss": float(mean_losses[1]) if epoch_losses else None,
                "cls_loss": float(mean_losses[2]) if epoch_losses else None,
                "total_loss": float(mean_losses[3]) if epoch_losses else None,
                ("val_map50" if len(val_idx) else "train_map50"): metric,
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

    def _detect_canvas(self, x, conf_threshold):
        """Decode + NMS on already-letterboxed tensors; rows are canvas-normalized."""
        net_cfg = self._net_config()
        self.module_.eval()
        with torch.no_grad():
            outs = self.module_(x)
        decoded = decode_predictions(outs, net_cfg, conf_threshold=conf_threshold)
        results = []
        for rows in decoded:
            if rows.shape[0]:
                corners = np.stack([rows[:, 0] - rows[:, 2] / 2,
                                    rows[:, 1] - rows[:, 3] / 2,
                                    rows[:, 0] + rows[:, 2] / 2,
                                    rows[:, 1] + rows[:, 3] / 2], axis=1)
                keep = nms(corners, rows[:, 4], self.nms_iou)
                rows = rows[keep]
            results.append(rows)
        return results

    def _map50_on(self, x, labels):
        rows = self._detect_canvas(x, self.EVAL_CONF)
        dets, truth = _to_metric_arrays(rows, labels)
        value = map_at_50(dets, truth)
        return -1.0 if value is None else value

    def predict(self, images, conf_threshold=None):
        """Detections per image, mapped back to each slice's own coordinates."""
        self._check_fitted()
        single = isinstance(images, np.ndarray) and images.ndim == 2
        image_list = [images] if single else list(images)
        threshold = self.conf_threshold if conf_threshold is None else conf_threshold
        geoms = [letterbox(np.asarray(img, dtype=np.float32), self.input_size)
                 for img in image_list]
        x = torch.from_numpy(np.stack([g[0] for g in geoms])).unsqueeze(1)
        canvas_rows = self._detect_canvas(x, threshold)
        out = []
        for img, rows, (canvas, scale, pads) in zip(image_list, canvas_rows, geoms):
            rows = unletterbox_detections(rows, np.asarray(img).shape,
                                          self.input_size, scale, pads)
            out.append([Detection2D(float(r[0]), float(r[1]), float(r[2]), float(r[3]),
                                    float(r[4]), int(r[5])) for r in rows])
        return out[0] if single else out

    def evaluate(self, images, labels):
        """mAP@50 and mAP@50:95 against normalized ground-truth label arrays."""
        self._check_fitted()
        x, ys = self._prepare(list(images),
                              [np.asarray(l, dtype=np.float64).reshape(-1, 5)
                               for l in labels])
        rows = self._detect_canvas(x, self.EVAL_CONF)
        dets, truth = _to_metric_arrays(rows, ys)
        return {"map50": map_at_50(dets, truth),
                "map50_95": map_at_50_95(dets, truth),
                "detections": rows}

    def save(self, path):
        self._check_fitted()
        params = self.get_params()
        train = params.pop("train")
        meta = {
            "estimator": "NoduleDetector",
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
        if meta.get("estimator") != "NoduleDetector":
            raise ValueError(f"{path} is not a NoduleDetector checkpoint")
        params = dict(meta["params"])
        params["anchors"] = tuple(tuple(tuple(a) for a in scale)
                                  for scale in params["anchors"])
        est = cls(train=_common.train_config_from_meta(meta), **params)
        est.module_ = DetectionNet(est._net_config())
        est.module_.load_state_dict(state)
        est.module_.eval()
        est.history_ = meta.get("history", [])
        est.best_metric_ = meta.get("best_metric")
        est.best_epoch_ = meta.get("best_epoch")
        est.steps_run_ = meta.get("steps_run")
        return est


def _to_metric_arrays(row_lists, label_lists):
    """Canvas-normalized rows + labels -> per-image corner arrays for mAP."""
    dets, truth = [], []
    for rows, labels in zip(row_lists, label_lists):
        rows = np.asarray(rows, dtype=np.float64).reshape(-1, 6)
        dets.append(np.stack([rows[:, 0] - rows[:, 2] / 2, rows[:, 1] - rows[:, 3] / 2,
                              rows[:, 0] + rows[:, 2] / 2, rows[:, 1] + rows[:, 3] / 2,
                              rows[:, 4]], axis=1) if rows.size else np.zeros((0, 5)))
        labels = np.asarray(labels, dtype=np.float64).reshape(-1, 5)
        truth.append(np.stack([labels[:, 1] - labels[:, 3] / 2,
                               labels[:, 2] - labels[:, 4] / 2,
                               labels[:, 1] + labels[:, 3] / 2,
                               labels[:, 2] + labels[:, 4] / 2], axis=1)
                     if labels.size else np.zeros((0, 4)))
    return dets, truth


def write_detections_csv(path, detections_per_slice):
    """`slice,cx,cy,w,h,score` rows, one per detection."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slice", "cx", "cy", "w", "h", "score"])
        for z, dets in detections_per_slice:
            for d in dets:
                writer.writerow([z, f"{d.cx:.6f}", f"{d.cy:.6f}", f"{d.w:.6f}",
                                 f"{d.h:.6f}", f"{d.score:.6f}"])
