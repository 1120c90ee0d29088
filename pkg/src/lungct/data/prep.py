"""Dataset preparation: bundle directories -> per-stage training artifacts.

Input layout: a data root containing one sub-directory per case with
volume.mhd(+.raw), optional mask.mhd, optional annotations.csv (phantom
bundles have exactly this shape; LUNA16 cases can be arranged the same way).

Output layout under the prep root:
    seg/<series>.npz            resampled volume + binary mask at the cube
    det/images/<series>_z####.png   8-bit grayscale axial slices (lung crop)
    det/labels/<series>_z####.txt   matching YOLO label files
    cls/patches.npz             64x64 patches + labels
    prep_summary.json
Slices without any box are skipped unless keep_empty_slices is set; the
detector needs positives far more than it needs empty planes at desk scale.
"""

import json
import os

import numpy as np

from ..volume import CtVolume, LungMask, binarize_lung_mask, clip_and_normalize_hu, \
    crop_foreground, pad_to_shape, resample_to_canonical
from .annotations import parse_annotations
from .metaimage import load_metaimage
from .patches import extract_classifier_patch, load_patch_bundle, save_patch_bundle
from .yolo import load_slice_png, read_yolo_labels, save_slice_png, \
    slice_bounding_boxes, write_yolo_labels


def discover_cases(data_root):
    """Case sub-directories holding at least volume.mhd, sorted by name."""
    cases = []
    for name in sorted(os.listdir(data_root)):
        case_dir = os.path.join(data_root, name)
        vol = os.path.join(case_dir, "volume.mhd")
        if not (os.path.isdir(case_dir) and os.path.isfile(vol)):
            continue
        mask = os.path.join(case_dir, "mask.mhd")
        ann = os.path.join(case_dir, "annotations.csv")
        cases.append({
            "series_id": name,
            "volume": vol,
            "mask": mask if os.path.isfile(mask) else None,
            "annotations": ann if os.path.isfile(ann) else None,
        })
    if not cases:
        raise ValueError(f"no case directories with volume.mhd under {data_root}")
    return cases


def _load_binary_mask(path):
    raw = load_metaimage(path)
    values = raw.voxels
    if values.max() > 1:  # LUNA16-style multi-label mask
        return binarize_lung_mask(values.astype(np.int32), raw.spacing, raw.origin)
    return binarize_lung_mask((values > 0).astype(np.int32), raw.spacing, raw.origin,
                              lung_labels=(1,))


def _reload_crop(seg_dir, case, margin, cube_size):
    """Rebuild a case's foreground crop from its persisted seg pair (pass 2
    keeps nothing in memory); maskless cases fall back to the full cube."""
    path = os.path.join(seg_dir, case["series_id"] + ".npz")
    if os.path.isfile(path):
        data = np.load(path)
        geometry = (tuple(data["spacing"]), tuple(data["origin"]))
        vol = CtVolume(data["volume"], geometry[0], geometry[1], normalized=True)
        mask = LungMask(data["mask"], geometry[0], geometry[1])
        crop_vol, _, _ = crop_foreground(vol, mask, margin=margin)
        return crop_vol
    volume = load_metaimage(case["volume"])
    canonical, _ = resample_to_canonical(clip_and_normalize_hu(volume),
                                         cube_size=cube_size)
    return canonical


def prep_dataset(data_root, out_dir, cube_size=64, margin=2,
                 keep_empty_slices=False):
    """Build seg/det/cls artifacts for every case; returns a summary dict."""
    cases = discover_cases(data_root)
    seg_dir = os.path.join(out_dir, "seg")
    det_img_dir = os.path.join(out_dir, "det", "images")
    det_lab_dir = os.path.join(out_dir, "det", "labels")
    cls_dir = os.path.join(out_dir, "cls")
    for d in (seg_dir, det_img_dir, det_lab_dir, cls_dir):
        os.makedirs(d, exist_ok=True)

    # pass 1: resample each case to the cube, persist the seg pair, and track
    # the dataset-wide maximum foreground crop shape (kept out of memory:
    # pass 2 reloads crops from the saved npz files)
    max_crop = (0, 0, 0)
    has_mask = {}
    for case in cases:
        series = case["series_id"]
        volume = load_metaimage(case["volume"])
        normalized = clip_and_normalize_hu(volume)
        mask = _load_binary_mask(case["mask"]) if case["mask"] else None
        canonical, canonical_mask = resample_to_canonical(normalized, mask,
                                                          cube_size=cube_size)
        has_mask[series] = mask is not None
        if canonical_mask is not None:
            np.savez(os.path.join(seg_dir, f"{series}.npz"),
                     volume=canonical.voxels.astype(np.float32),
                     mask=canonical_mask.voxels.astype(np.uint8),
                     spacing=np.asarray(canonical.spacing, dtype=np.float64),
                     origin=np.asarray(canonical.origin, dtype=np.float64))
            crop_vol, _, _ = crop_foreground(canonical, canonical_mask, margin=margin)
        else:
            crop_vol = canonical
        max_crop = tuple(max(m, n) for m, n in zip(max_crop, crop_vol.shape))

    # pass 2: pad all crops to the dataset-wide maximum shape, then label
    n_slices = 0
    patches = []
    summary_cases = []
    for case in cases:
        series = case["series_id"]
        crop_vol = pad_to_shape(_reload_crop(seg_dir, case, margin, cube_size),
                                max_crop)
        case_entry = {"series_id": series, "slices": 0, "patches": 0,
                      "has_mask": has_mask[series]}

        if case["annotations"]:
            annotations = parse_annotations(case["annotations"])
            by_slice = {}
            for ann in annotations:
                for z, rec in slice_bounding_boxes(ann, crop_vol):
                    by_slice.setdefault(z, []).append(rec)
            z_range = range(crop_vol.shape[0]) if keep_empty_slices \
                else sorted(by_slice)
            for z in z_range:
                stem = f"{series}_z{z:04d}"
                save_slice_png(crop_vol.voxels[z],
                               os.path.join(det_img_dir, stem + ".png"))
                write_yolo_labels(by_slice.get(z, []),
                                  os.path.join(det_lab_dir, stem + ".txt"))
                case_entry["slices"] += 1
                n_slices += 1
            for i, ann in enumerate(annotations):
                if ann.malignancy is None:
                    continue
                patches.append(extract_classifier_patch(crop_vol, ann, i))
                case_entry["patches"] += 1
        summary_cases.append(case_entry)

    save_patch_bundle(os.path.join(cls_dir, "patches.npz"), patches)
    summary = {
        "cube_size": cube_size,
        "margin": margin,
        "crop_shape": list(max_crop),
        "cases": summary_cases,
        "n_cases": len(cases),
        "n_slices": n_slices,
        "n_patches": len(patches),
    }
    with open(os.path.join(out_dir, "prep_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def load_seg_dataset(prep_dir):
    seg_dir = os.path.join(prep_dir, "seg")
    volumes, masks, names = [], [], []
    for name in sorted(os.listdir(seg_dir)):
        if not name.endswith(".npz"):
            continue
        data = np.load(os.path.join(seg_dir, name))
        volumes.append(data["volume"])
        masks.append(data["mask"])
        names.append(name[:-4])
    if not volumes:
        raise ValueError(f"empty dataset: no seg volumes under {seg_dir}")
    return volumes, masks, names


def load_det_dataset(prep_dir):
    img_dir = os.path.join(prep_dir, "det", "images")
    lab_dir = os.path.join(prep_dir, "det", "labels")
    images, labels, names = [], [], []
    for name in sorted(os.listdir(img_dir)):
        if not name.endswith(".png"):
            continue
        stem = name[:-4]
        images.append(load_slice_png(os.path.join(img_dir, name)))
        records = read_yolo_labels(os.path.join(lab_dir, stem + ".txt"))
        labels.append(np.array([[r.class_id, r.cx, r.cy, r.w, r.h] for r in records],
                               dtype=np.float64).reshape(-1, 5))
        names.append(stem)
    if not images:
        raise ValueError(f"empty dataset: no slice images under {img_dir}")
    return images, labels, names


def load_cls_dataset(prep_dir):
    path = os.path.join(prep_dir, "cls", "patches.npz")
    patch_list = load_patch_bundle(path)
    if not patch_list:
        raise ValueError(f"empty dataset: no patches in {path}")
    pixels = np.stack([p.pixels for p in patch_list])
    labels = np.array([p.label for p in patch_list])
    return pixels, labels
