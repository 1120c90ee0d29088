"""Evaluation metrics: Dice, confusion-matrix scores, AP and mAP.

Undefined ratios (zero denominators, or AP without any ground truth) are
reported as None rather than silently coerced to 0.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .validation import check_same_shape

IOU_THRESHOLDS_50_95 = tuple(round(0.50 + 0.05 * k, 2) for k in range(10))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class ClassificationScores:
    counts: ConfusionCounts
    accuracy: float
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]


@dataclass(frozen=True)
class PrCurve:
    """Score-ranked operating points; recall is nondecreasing."""

    recall: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.recall) < 0):
            raise ValueError("recall must be nondecreasing")
        if self.precision.size and (self.precision.min() < 0 or self.precision.max() > 1):
            raise ValueError("precision must lie in [0, 1]")


def dice_score(x, y):
    """2|X n Y| / (|X| + |Y|) over two binary grids; both empty -> 1.0."""
    x = np.asarray(x)
    y = np.asarray(y)
    check_same_shape(x, y, "dice operands")
    x = x.astype(bool)
    y = y.astype(bool)
    denom = int(x.sum()) + int(y.sum())
    if denom == 0:
        return 1.0
    inter = int(np.logical_and(x, y).sum())
    return 2.0 * inter / denom


def confusion_and_scores(predictions, truth, positive=1):
    """Count TP/TN/FP/FN and derive accuracy, precision, recall, F1.

    accuracy = (TP+TN)/all, precision = TP/(TP+FP), recall = TP/(TP+FN),
    F1 = 2TP/(2TP+FP+FN); a zero denominator yields None for that score.
    """
    pred = np.asarray(predictions)
    true = np.asarray(truth)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    p = pred == positive
    t = true == positive
    tp = int(np.sum(p & t))
    tn = int(np.sum(~p & ~t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))
    counts = ConfusionCounts(tp, tn, fp, fn)

    def ratio(num, den):
        return num / den if den > 0 else None

    accuracy = (tp + tn) / counts.total
    precision = ratio(tp, tp + fp)
    recall = ratio(tp, tp + fn)
    f1 = ratio(2 * tp, 2 * tp + fp + fn)
    return ClassificationScores(counts, accuracy, precision, recall, f1)


def box_iou_xyxy(a, b):
    """IoU of two (x1, y1, x2, y2) boxes in continuous coordinates."""
    ix1 = max(a[0], b[0])
    iy1 = max(a[1], b[1])
    ix2 = min(a[2], b[2])
    iy2 = min(a[3], b[3])
    inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def _match_detections(detections, ground_truth, iou_threshold):
    """Greedy score-descending matching; each GT claimed at most once.

    detections: per-image arrays (N_i, 5) of x1,y1,x2,y2,score.
    ground_truth: per-image arrays (M_i, 4).
    Returns (tp_flags, n_gt) with flags in global score order.
    """
    order = []
    for img, dets in enumerate(detections):
        dets = np.asarray(dets, dtype=np.float64).reshape(-1, 5)
        for j, det in enumerate(dets):
            order.append((-det[4], img, j, det))
    order.sort(key=lambda t: (t[0], t[1], t[2]))

    n_gt = sum(len(np.asarray(g).reshape(-1, 4)) for g in ground_truth)
    used = [np.zeros(len(np.asarray(g).reshape(-1, 4)), dtype=bool) for g in ground_truth]
    tp_flags = np.zeros(len(order), dtype=bool)
    for k, (_, img, _, det) in enumerate(order):
        gts = np.asarray(ground_truth[img], dtype=np.float64).reshape(-1, 4)
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if used[img][j]:
                continue
            iou = box_iou_xyxy(det[:4], gt)
            if iou >= iou_threshold and iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0:
            used[img][best_j] = True
            tp_flags[k] = True
    return tp_flags, n_gt


def pr_curve(detections, ground_truth, iou_threshold):
    """Precision-recall operating points from score-ranked detections."""
    tp_flags, n_gt = _match_detections(detections, ground_truth, iou_threshold)
    if n_gt == 0:
        return None
    tp_cum = np.cumsum(tp_flags)
    fp_cum = np.cumsum(~tp_flags)
    recall = tp_cum / n_gt
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1)
    return PrCurve(recall, precision)


def average_precision(detections, ground_truth, iou_threshold=0.5):
    """All-point interpolated area under the precision-recall curve.

    None (undefined) when there is no ground truth anywhere.
    """
    curve = pr_curve(detections, ground_truth, iou_threshold)
    if curve is None:
        return None
    if curve.recall.size == 0:
        return 0.0
    # precision envelope: best precision at any recall >= r
    recall = np.concatenate([[0.0], curve.recall])
    precision = np.concatenate([[1.0], curve.precision])
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum(np.diff(recall) * envelope[1:]))


def _mean_ap_over_classes(detections, ground_truth, thresholds):
    """detections/ground_truth are either per-image lists (single class) or
    dicts class_id -> per-image lists; classes without GT are skipped."""
    if isinstance(ground_truth, dict):
        per_class = []
        for cls in sorted(ground_truth):
            cls_dets = detections.get(cls, [[] for _ in ground_truth[cls]])
            ap = _mean_ap_over_classes(cls_dets, ground_truth[cls], thresholds)
            if ap is not None:
                per_class.append(ap)
        return float(np.mean(per_class)) if per_class else None
    values = []
    for threshold in thresholds:
        ap = average_precision(detections, ground_truth, iou_threshold=threshold)
        if ap is None:
            return None
        values.append(ap)
    return float(np.mean(values))


def map_at_50(detections, ground_truth):
    """Mean per-class AP at IoU 0.5; equals plain AP for the single-class case."""
    return _mean_ap_over_classes(detections, ground_truth, (0.5,))


def map_at_50_95(detections, ground_truth):
    """Mean per-class AP averaged over IoU thresholds 0.50, 0.55, ..., 0.95."""
    return _mean_ap_over_classes(detections, ground_truth, IOU_THRESHOLDS_50_95)
