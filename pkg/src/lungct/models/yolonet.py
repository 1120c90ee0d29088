"""Single-stage anchor-based detector for axial slices.

Structure: a cross-stage-partial (CSP) backbone emitting stride-8/16/32
feature maps, spatial pyramid pooling on the deepest map, a top-down plus
bottom-up aggregation neck, and per-scale heads predicting
(tx, ty, tw, th, objectness, class logits) for each of 3 anchors per cell.

Box decoding (per cell (gx, gy) with stride s and anchor (aw, ah)):
    cx = (gx + sigmoid(tx)) * s          cy = (gy + sigmoid(ty)) * s
    w  = (2 * sigmoid(tw))^2 * aw        h  = (2 * sigmoid(th))^2 * ah
    score = sigmoid(obj) * sigmoid(cls)
The size transform is sigmoid-based rather than exp so it cannot blow up;
it spans (0, 4) * anchor, which matches the < 4 aspect/size matching rule.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

STRIDES = (8, 16, 32)

# square-ish anchor priors for full-scale 256-pixel lung crops, (w, h) px
DEFAULT_ANCHORS = (
    ((6, 6), (10, 10), (15, 15)),
    ((20, 20), (27, 27), (36, 36)),
    ((48, 48), (62, 62), (80, 80)),
)


@dataclass(frozen=True)
class DetNetConfig:
    input_size: int = 256
    in_channels: int = 1
    class_count: int = 1
    anchors: tuple = DEFAULT_ANCHORS
    width_mult: float = 0.5   # small variant
    depth_mult: float = 0.33
    conf_threshold: float = 0.3
    nms_iou: float = 0.45

    def __post_init__(self):
        if self.input_size % 32 != 0:
            raise ValueError(f"input_size must be divisible by 32, got {self.input_size}")
        anchors = tuple(tuple((float(w), float(h)) for w, h in scale)
                        for scale in self.anchors)
        if len(anchors) != 3 or any(len(scale) != 3 for scale in anchors):
            raise ValueError("anchors must be 3 scales x 3 (w, h) pairs")
        if any(w <= 0 or h <= 0 for scale in anchors for w, h in scale):
            raise ValueError("anchors must be positive")
        for name in ("conf_threshold", "nms_iou"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        object.__setattr__(self, "anchors", anchors)

    @property
    def anchors_per_scale(self):
        return 3

    @property
    def outputs_per_anchor(self):
        return 5 + self.class_count


def _width(ch, mult):
    return max(8, int(math.ceil(ch * mult / 8)) * 8)


def _depth(n, mult):
    return max(1, round(n * mult))


class Conv(nn.Module):
    def __init__(self, c1, c2, k=1, s=1, p=None):
        super().__init__()
        self.conv = nn.Conv2d(c1, c2, k, s, k // 2 if p is None else p, bias=False)
        self.bn = nn.BatchNorm2d(c2)
        self.act = nn.SiLU()

    def forward(self, x):
        return self.act(self.bn(self.conv(x)))


class Bottleneck(nn.Module):
    def __init__(self, c1, c2, shortcut=True):
        super().__init__()
        c_ = c2 // 2
        self.cv1 = Conv(c1, c_, 1)
        self.cv2 = Conv(c_, c2, 3)
        self.add = shortcut and c1 == c2

    def forward(self, x):
        y = self.cv2(self.cv1(x))
        return x + y if self.add else y


class C3(nn.Module):
    """Cross-stage partial block: split, run bottlenecks on one half, re-merge."""

    def __init__(self, c1, c2, n=1, shortcut=True):
        super().__init__()
        c_ = c2 // 2
        self.cv1 = Conv(c1, c_, 1)
        self.cv2 = Conv(c1, c_, 1)
        self.cv3 = Conv(2 * c_, c2, 1)
        self.m = nn.Sequential(*(Bottleneck(c_, c_, shortcut) for _ in range(n)))

    def forward(self, x):
        return self.cv3(torch.cat([self.m(self.cv1(x)), self.cv2(x)], dim=1))


class SPP(nn.Module):
    """Parallel max-pools (5, 9, 13) concatenated for multi-scale context."""

    def __init__(self, c1, c2):
        super().__init__()
        c_ = c1 // 2
        self.cv1 = Conv(c1, c_, 1)
        self.pools = nn.ModuleList(nn.MaxPool2d(k, stride=1, padding=k // 2)
                                   for k in (5, 9, 13))
        self.cv2 = Conv(c_ * 4, c2, 1)

    def forward(self, x):
        x = self.cv1(x)
        return self.cv2(torch.cat([x] + [p(x) for p in self.pools], dim=1))


class DetectionNet(nn.Module):
    """Backbone + neck + per-scale anchor heads."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        w = lambda c: _width(c, config.width_mult)
        d = lambda n: _depth(n, config.depth_mult)

        self.stem = Conv(config.in_channels, w(64), 6, 2, p=2)        # /2
        self.down1 = Conv(w(64), w(128), 3, 2)                        # /4
        self.c3_1 = C3(w(128), w(128), d(3))
        self.down2 = Conv(w(128), w(256), 3, 2)                       # /8
        self.c3_2 = C3(w(256), w(256), d(6))
        self.down3 = Conv(w(256), w(512), 3, 2)                       # /16
        self.c3_3 = C3(w(512), w(512), d(9))
        self.down4 = Conv(w(512), w(1024), 3, 2)                      # /32
        self.c3_4 = C3(w(1024), w(1024), d(3))
        self.spp = SPP(w(1024), w(1024))

        self.lat5 = Conv(w(1024), w(512), 1)
        self.c3_t4 = C3(w(1024), w(512), d(3), shortcut=False)
        self.lat4 = Conv(w(512), w(256), 1)
        self.c3_t3 = C3(w(512), w(256), d(3), shortcut=False)
        self.down_n3 = Conv(w(256), w(256), 3, 2)
        self.c3_n4 = C3(w(512), w(512), d(3), shortcut=False)
        self.down_n4 = Conv(w(512), w(512), 3, 2)
        self.c3_n5 = C3(w(1024), w(1024), d(3), shortcut=False)

        out_ch = config.anchors_per_scale * config.outputs_per_anchor
        self.heads = nn.ModuleList([nn.Conv2d(w(256), out_ch, 1),
                                    nn.Conv2d(w(512), out_ch, 1),
                                    nn.Conv2d(w(1024), out_ch, 1)])
        self._init_head_biases()

    def _init_head_biases(self):
        # start objectness near zero probability so early training is stable
        no = self.config.outputs_per_anchor
        for head in self.heads:
            bias = head.bias.detach().view(self.config.anchors_per_scale, no)
            bias[:, 4] = -4.0
            head.bias = nn.Parameter(bias.view(-1))

    def forward(self, x):
        if x.shape[-1] % 32 or x.shape[-2] % 32:
            raise ValueError(f"spatial size {tuple(x.shape[-2:])} not divisible by 32")
        x = self.stem(x)
        x = self.c3_1(self.down1(x))
        p3 = self.c3_2(self.down2(x))
        p4 = self.c3_3(self.down3(p3))
        p5 = self.spp(self.c3_4(self.down4(p4)))

        l5 = self.lat5(p5)
        t4 = self.c3_t4(torch.cat([F.interpolate(l5, scale_factor=2, mode="nearest"), p4], 1))
        l4 = self.lat4(t4)
        n3 = self.c3_t3(torch.cat([F.interpolate(l4, scale_factor=2, mode="nearest"), p3], 1))
        n4 = self.c3_n4(torch.cat([self.down_n3(n3), l4], 1))
        n5 = self.c3_n5(torch.cat([self.down_n4(n4), l5], 1))

        outputs = []
        a = self.config.anchors_per_scale
        no = self.config.outputs_per_anchor
        for head, feat in zip(self.heads, (n3, n4, n5)):
            b, _, ny, nx = feat.shape
            raw = head(feat).view(b, a, no, ny, nx).permute(0, 1, 3, 4, 2).contiguous()
            outputs.append(raw)
        return outputs


def build_detector(config):
    return DetectionNet(config)


def giou(box_a, box_b):
    """Generalized IoU of (x1, y1, x2, y2) boxes: IoU - |C \\ (A u B)| / |C|.

    Accepts single boxes or broadcastable stacks; rejects degenerate
    (zero-area) input boxes. Differentiable when given torch tensors.
    """
    tensor_in = torch.is_tensor(box_a) or torch.is_tensor(box_b)
    a = box_a if torch.is_tensor(box_a) else torch.as_tensor(box_a, dtype=torch.float64)
    b = box_b if torch.is_tensor(box_b) else torch.as_tensor(box_b, dtype=torch.float64)
    if torch.any(a[..., 2] <= a[..., 0]) or torch.any(a[..., 3] <= a[..., 1]) \
            or torch.any(b[..., 2] <= b[..., 0]) or torch.any(b[..., 3] <= b[..., 1]):
        raise ValueError("degenerate box: x2 > x1 and y2 > y1 required")
    value = _giou_raw(a, b)
    if tensor_in:
        return value
    return value.item() if value.ndim == 0 else value.numpy()


def _giou_raw(a, b):
    ix1 = torch.maximum(a[..., 0], b[..., 0])
    iy1 = torch.maximum(a[..., 1], b[..., 1])
    ix2 = torch.minimum(a[..., 2], b[..., 2])
    iy2 = torch.minimum(a[..., 3], b[..., 3])
    inter = (ix2 - ix1).clamp(min=0) * (iy2 - iy1).clamp(min=0)
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    union = area_a + area_b - inter
    iou = inter / union
    cx1 = torch.minimum(a[..., 0], b[..., 0])
    cy1 = torch.minimum(a[..., 1], b[..., 1])
    cx2 = torch.maximum(a[..., 2], b[..., 2])
    cy2 = torch.maximum(a[..., 3], b[..., 3])
    hull = (cx2 - cx1) * (cy2 - cy1)
    return iou - (hull - union) / hull


def _cxcywh_to_xyxy(boxes):
    cx, cy, w, h = boxes[..., 0], boxes[..., 1], boxes[..., 2], boxes[..., 3]
    return torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], dim=-1)


def encode_box(box_px, anchor, stride, cell):
    """Inverse of the decode transform for a box owned by `cell`.

    Only valid when the center offset within the cell is in (0, 1) and the
    size ratio to the anchor is in (0, 4); neighbor-cell matches fall outside
    the sigmoid's range and cannot be encoded exactly.
    """
    cx, cy, w, h = (float(v) for v in box_px)
    gx, gy = cell
    ox = cx / stride - gx
    oy = cy / stride - gy
    rw = math.sqrt(w / anchor[0]) / 2
    rh = math.sqrt(h / anchor[1]) / 2
    for name, v in (("x offset", ox), ("y offset", oy), ("w ratio", rw), ("h ratio", rh)):
        if not 0.0 < v < 1.0:
            raise ValueError(f"{name} {v} outside the encodable (0, 1) range")
    logit = lambda p: math.log(p / (1 - p))
    return logit(ox), logit(oy), logit(rw), logit(rh)


def decode_predictions(raw_outputs, config, conf_threshold=None):
    """Raw head outputs -> per-image (N, 6) arrays [cx, cy, w, h, score, class].

    Boxes are normalized by input_size and clamped into the unit square;
    rows below the confidence threshold are dropped.
    """
    threshold = config.conf_threshold if conf_threshold is None else conf_threshold
    batch = raw_outputs[0].shape[0]
    expected_no = config.outputs_per_anchor
    per_image = [[] for _ in range(batch)]
    size = float(config.input_size)
    for scale, (raw, stride) in enumerate(zip(raw_outputs, STRIDES)):
        if raw.shape[1] != config.anchors_per_scale or raw.shape[-1] != expected_no:
            raise ValueError(f"raw output shape {tuple(raw.shape)} does not match config")
        with torch.no_grad():
            ny, nx = raw.shape[2], raw.shape[3]
            anchors = torch.as_tensor(config.anchors[scale], dtype=raw.dtype)
            gy, gx = torch.meshgrid(torch.arange(ny, dtype=raw.dtype),
                                    torch.arange(nx, dtype=raw.dtype), indexing="ij")
            sig = torch.sigmoid(raw)
            cx = (gx + sig[..., 0]) * stride
            cy = (gy + sig[..., 1]) * stride
            w = (2 * sig[..., 2]) ** 2 * anchors[:, 0].view(1, -1, 1, 1)
            h = (2 * sig[..., 3]) ** 2 * anchors[:, 1].view(1, -1, 1, 1)
            cls_scores = sig[..., 4:5] * sig[..., 5:]
            best_cls = cls_scores.argmax(dim=-1)
            best_score = cls_scores.gather(-1, best_cls.unsqueeze(-1)).squeeze(-1)
            keep = best_score >= threshold
            for b in range(batch):
                sel = keep[b]
                if not sel.any():
                    continue
                x1 = ((cx[b][sel] - w[b][sel] / 2) / size).clamp(0, 1)
                y1 = ((cy[b][sel] - h[b][sel] / 2) / size).clamp(0, 1)
                x2 = ((cx[b][sel] + w[b][sel] / 2) / size).clamp(0, 1)
                y2 = ((cy[b][sel] + h[b][sel] / 2) / size).clamp(0, 1)
                ok = (x2 > x1) & (y2 > y1)
                rows = torch.stack([(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1,
                                    best_score[b][sel],
                                    best_cls[b][sel].to(raw.dtype)], dim=-1)[ok]
                per_image[b].append(rows.numpy())
    return [np.concatenate(rows) if rows else np.zeros((0, 6)) for rows in per_image]


def build_targets(labels, config):
    """Anchor/cell assignment for a batch of normalized (M, 5) label arrays.

    A target matches an anchor when max(w/aw, aw/w, h/ah, ah/h) < 4 and is
    assigned to its primary cell plus the nearest neighbor cell on each
    in-plane axis.
    """
    per_scale = []
    size = float(config.input_size)
    for scale, stride in enumerate(STRIDES):
        grid = config.input_size // stride
        b_idx, a_idx, gy_idx, gx_idx, boxes, classes = [], [], [], [], [], []
        for b, lab in enumerate(labels):
            lab = np.asarray(lab, dtype=np.float64).reshape(-1, 5)
            for cls, cxn, cyn, wn, hn in lab:
                cx, cy, w, h = cxn * size, cyn * size, wn * size, hn * size
                for a, (aw, ah) in enumerate(config.anchors[scale]):
                    ratio = max(w / aw, aw / w, h / ah, ah / h)
                    if ratio >= 4.0:
                        continue
                    gx = int(cx / stride)
                    gy = int(cy / stride)
                    fx = cx / stride - gx
                    fy = cy / stride - gy
                    cells = {(min(gx, grid - 1), min(gy, grid - 1))}
                    nx = gx + (1 if fx > 0.5 else -1)
                    if 0 <= nx < grid:
                        cells.add((nx, min(gy, grid - 1)))
                    ny = gy + (1 if fy > 0.5 else -1)
                    if 0 <= ny < grid:
                        cells.add((min(gx, grid - 1), ny))
                    for cgx, cgy in sorted(cells):
                        b_idx.append(b)
                        a_idx.append(a)
                        gy_idx.append(cgy)
                        gx_idx.append(cgx)
                        boxes.append((cx, cy, w, h))
                        classes.append(int(cls))
        per_scale.append({
            "b": torch.as_tensor(b_idx, dtype=torch.long),
            "a": torch.as_tensor(a_idx, dtype=torch.long),
            "gy": torch.as_tensor(gy_idx, dtype=torch.long),
            "gx": torch.as_tensor(gx_idx, dtype=torch.long),
            "box": torch.as_tensor(np.array(boxes, dtype=np.float32).reshape(-1, 4)),
            "cls": torch.as_tensor(classes, dtype=torch.long),
        })
    return per_scale


OBJ_SCALE_BALANCE = (4.0, 1.0, 0.4)
LOSS_WEIGHTS = {"box": 0.05, "obj": 1.0, "cls": 0.5}


def detection_loss(raw_outputs, targets, config, weights=None):
    """(box, obj, cls, total) losses for one batch.

    box: mean(1 - GIoU) over matched anchor/cell pairs; obj: BCE over every
    cell, positives weighted per-scale and targeted with the (detached)
    GIoU quality of their own box prediction so confidence tracks
    localization; cls: BCE over matched cells (kept even for the degenerate
    single-class case); total: weighted sum.
    """
    weights = dict(LOSS_WEIGHTS if weights is None else weights)
    device = raw_outputs[0].device
    zero = torch.zeros((), device=device)
    box_terms, cls_terms = [], []
    obj_loss = zero.clone()
    for scale, (raw, stride, balance) in enumerate(zip(raw_outputs, STRIDES,
                                                       OBJ_SCALE_BALANCE)):
        tgt = targets[scale]
        obj_target = torch.zeros_like(raw[..., 4])
        n = int(tgt["b"].numel())
        if n:
            pred = raw[tgt["b"], tgt["a"], tgt["gy"], tgt["gx"]]
            sig = torch.sigmoid(pred[:, :4])
            anchors = torch.as_tensor(config.anchors[scale], dtype=raw.dtype,
                                      device=device)[tgt["a"]]
            pcx = (tgt["gx"].to(raw.dtype) + sig[:, 0]) * stride
            pcy = (tgt["gy"].to(raw.dtype) + sig[:, 1]) * stride
            pw = (2 * sig[:, 2]) ** 2 * anchors[:, 0]
            ph = (2 * sig[:, 3]) ** 2 * anchors[:, 1]
            pred_xyxy = _cxcywh_to_xyxy(torch.stack([pcx, pcy, pw, ph], dim=-1))
            tgt_xyxy = _cxcywh_to_xyxy(tgt["box"].to(raw.dtype))
            giou_vals = _giou_raw(pred_xyxy, tgt_xyxy)
            box_terms.append(1.0 - giou_vals)

            cls_target = F.one_hot(tgt["cls"], config.class_count).to(raw.dtype)
            cls_terms.append(F.binary_cross_entropy_with_logits(
                pred[:, 5:], cls_target, reduction="none").reshape(-1))
            quality = giou_vals.detach().clamp(0.0, 1.0)
            current = obj_target[tgt["b"], tgt["a"], tgt["gy"], tgt["gx"]]
            obj_target[tgt["b"], tgt["a"], tgt["gy"], tgt["gx"]] = \
                torch.maximum(current, quality)
        obj_loss = obj_loss + balance * F.binary_cross_entropy_with_logits(
            raw[..., 4], obj_target, reduction="mean")

    box_loss = torch.cat(box_terms).mean() if box_terms else zero
    cls_loss = torch.cat(cls_terms).mean() if cls_terms else zero
    total = weights["box"] * box_loss + weights["obj"] * obj_loss + weights["cls"] * cls_loss
    return box_loss, obj_loss, cls_loss, total


def nms(boxes, scores, iou_threshold=0.45):
    """Greedy score-descending suppression; returns kept indices.

    boxes are (N, 4) corners. Ties break deterministically by
    (score desc, center x, center y).
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if boxes.shape[0] != scores.shape[0]:
        raise ValueError("boxes and scores length mismatch")
    cx = (boxes[:, 0] + boxes[:, 2]) / 2
    cy = (boxes[:, 1] + boxes[:, 3]) / 2
    order = np.lexsort((cy, cx, -scores))
    keep = []
    for i in order:
        ok = True
        for j in keep:
            ix1 = max(boxes[i, 0], boxes[j, 0])
            iy1 = max(boxes[i, 1], boxes[j, 1])
            ix2 = min(boxes[i, 2], boxes[j, 2])
            iy2 = min(boxes[i, 3], boxes[j, 3])
            inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
            area_i = (boxes[i, 2] - boxes[i, 0]) * (boxes[i, 3] - boxes[i, 1])
            area_j = (boxes[j, 2] - boxes[j, 0]) * (boxes[j, 3] - boxes[j, 1])
            union = area_i + area_j - inter
            if union > 0 and inter / union > iou_threshold:
                ok = False
                break
        if ok:
            keep.append(int(i))
    return keep


def anchors_from_boxes(widths_heights, random_state=0):
    """k-means (k = 9) anchors from training box sizes in pixels, grouped into
    3 scales of 3 by ascending area."""
    import warnings

    from sklearn.cluster import KMeans
    from sklearn.exceptions import ConvergenceWarning

    wh = np.asarray(widths_heights, dtype=np.float64).reshape(-1, 2)
    if wh.shape[0] == 0:
        raise ValueError("no boxes to cluster")
    if wh.shape[0] < 9:
        wh = np.resize(wh, (9, 2))  # duplicates are fine; clusters collapse
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        km = KMeans(n_clusters=9, n_init=10, random_state=random_state).fit(wh)
    centers = km.cluster_centers_
    centers = centers[np.argsort(centers.prod(axis=1))]
    centers = np.maximum(centers, 1.0)
    return tuple(tuple((float(w), float(h)) for w, h in centers[i * 3:(i + 1) * 3])
                 for i in range(3))
