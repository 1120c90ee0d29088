"""Independent brute-force oracles used to cross-check the library.

Everything here is deliberately naive (sets, O(n^2) loops, per-threshold
re-matching, dense voxel counting) and shares no code with the package.
"""

import numpy as np


def dice_from_sets(x, y):
    """Dice via explicit voxel-index sets."""
    xs = {tuple(idx) for idx in np.argwhere(np.asarray(x).astype(bool))}
    ys = {tuple(idx) for idx in np.argwhere(np.asarray(y).astype(bool))}
    if not xs and not ys:
        return 1.0
    return 2.0 * len(xs & ys) / (len(xs) + len(ys))


def confusion_by_counting(predictions, truth, positive=1):
    tp = tn = fp = fn = 0
    for p, t in zip(predictions, truth):
        if p == positive and t == positive:
            tp += 1
        elif p == positive:
            fp += 1
        elif t == positive:
            fn += 1
        else:
            tn += 1
    return tp, tn, fp, fn


def iou_xyxy(a, b):
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def iou_giou_by_pixel_counting(a, b):
    """(IoU, GIoU) of two integer-coordinate boxes by counting unit pixels."""
    x_min = min(a[0], b[0])
    y_min = min(a[1], b[1])
    x_max = max(a[2], b[2])
    y_max = max(a[3], b[3])
    inter = union = hull = 0
    for x in range(int(x_min), int(x_max)):
        for y in range(int(y_min), int(y_max)):
            in_a = a[0] <= x < a[2] and a[1] <= y < a[3]
            in_b = b[0] <= x < b[2] and b[1] <= y < b[3]
            inter += in_a and in_b
            union += in_a or in_b
            hull += 1
    iou = inter / union if union else 0.0
    return iou, iou - (hull - union) / hull


def nms_bruteforce(boxes, scores, iou_threshold):
    """Greedy suppression with an explicit O(n^2) scan.

    Tie-break: score desc, then box center x, then center y.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    cx = (boxes[:, 0] + boxes[:, 2]) / 2
    cy = (boxes[:, 1] + boxes[:, 3]) / 2
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], cx[i], cy[i]))
    keep = []
    for i in order:
        if all(iou_xyxy(boxes[i], boxes[j]) <= iou_threshold for j in keep):
            keep.append(i)
    return keep


def ap_by_operating_points(detections, ground_truth, iou_threshold):
    """AP by enumerating every score threshold as an explicit operating point.

    At each unique score s (descending) the detections with score >= s are
    re-matched from scratch; the resulting PR points are integrated with the
    all-point (best-precision-to-the-right) rule.
    """
    all_scores = sorted({float(d[4]) for dets in detections for d in dets}, reverse=True)
    n_gt = sum(len(g) for g in ground_truth)
    if n_gt == 0:
        return None
    points = []
    for s in all_scores:
        tp = fp = 0
        for dets, gts in zip(detections, ground_truth):
            kept = sorted([d for d in dets if d[4] >= s], key=lambda d: -d[4])
            used = [False] * len(gts)
            for d in kept:
                best_iou, best_j = 0.0, -1
                for j, g in enumerate(gts):
                    if used[j]:
                        continue
                    iou = iou_xyxy(d, g)
                    if iou >= iou_threshold and iou > best_iou:
                        best_iou, best_j = iou, j
                if best_j >= 0:
                    used[best_j] = True
                    tp += 1
                else:
                    fp += 1
        recall = tp / n_gt
        precision = tp / (tp + fp) if tp + fp else 1.0
        points.append((recall, precision))
    points.sort()
    ap = 0.0
    prev_r = 0.0
    for k, (r, _) in enumerate(points):
        best_p = max(p for rr, p in points if rr >= r)
        ap += (r - prev_r) * best_p
        prev_r = r
    return ap


def sphere_volume_by_voxel_counting(radius, step):
    """Volume of a radius-r sphere by dense voxel counting at pitch `step`."""
    grid = np.arange(-radius - step, radius + 2 * step, step)
    zz, yy, xx = np.meshgrid(grid, grid, grid, indexing="ij")
    inside = zz ** 2 + yy ** 2 + xx ** 2 <= radius ** 2
    return inside.sum() * step ** 3


def finite_difference_gradient(fn, x, eps=1e-6):
    """Central finite differences of scalar fn at x (any-dim float64 array)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    g = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn(x)
        flat[i] = orig - eps
        lo = fn(x)
        flat[i] = orig
        g[i] = (hi - lo) / (2 * eps)
    return grad


def max_relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale))
