"""Overlay rendering: mask contour, detection boxes, classification labels.

Pure drawing; nothing here analyzes data. Output bytes are deterministic for
fixed inputs.
"""

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

CONTOUR_RGB = (80, 220, 100)
BOX_RGB = (235, 80, 60)
TEXT_RGB = (250, 230, 90)


def mask_contour(mask2d):
    """Single-pixel contour of a binary plane (mask minus its erosion)."""
    mask = np.asarray(mask2d).astype(bool)
    if not mask.any():
        return np.zeros_like(mask)
    return mask & ~ndimage.binary_erosion(mask, border_value=0)


def render_overlay(slice2d, mask2d, detections, classifications, out_path,
                   scale=4):
    """Write a PNG of the slice with contour, boxes, and labels.

    detections: iterable with normalized (cx, cy, w, h, score) attributes;
    classifications: matching list of label strings (may be empty/None).
    scale: integer upsampling so desk-scale slices are legible.
    """
    plane = np.asarray(slice2d, dtype=np.float32)
    if plane.ndim != 2:
        raise ValueError("slice must be 2D")
    h, w = plane.shape
    gray = np.rint(np.clip(plane, 0.0, 1.0) * 255.0).astype(np.uint8)
    rgb = np.stack([gray] * 3, axis=-1)

    if mask2d is not None:
        contour = mask_contour(mask2d)
        rgb[contour] = CONTOUR_RGB

    img = Image.fromarray(rgb, mode="RGB").resize((w * scale, h * scale),
                                                  Image.NEAREST)
    draw = ImageDraw.Draw(img)
    labels = list(classifications or [])
    for i, det in enumerate(detections):
        x1 = (det.cx - det.w / 2) * w * scale
        y1 = (det.cy - det.h / 2) * h * scale
        x2 = (det.cx + det.w / 2) * w * scale
        y2 = (det.cy + det.h / 2) * h * scale
        draw.rectangle([x1, y1, x2, y2], outline=BOX_RGB, width=1)
        text = f"{det.score:.2f}"
        if i < len(labels) and labels[i]:
            text = f"{labels[i]} {det.score:.2f}"
        draw.text((x1 + 1, max(0.0, y1 - 10)), text, fill=TEXT_RGB)
    img.save(out_path)
