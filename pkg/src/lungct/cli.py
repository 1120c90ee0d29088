"""Command-line interface.

Commands: synth-gen, prep, train-seg, train-det, train-cls, eval-seg,
eval-det, eval-cls, infer. Every run writes a manifest.json (command, args,
config echo, seed, versions) into its output directory so it can be re-run.

Exit codes: 0 success, 2 usage errors, 1 runtime failures (with one
machine-readable JSON error line on stderr).
"""

import argparse
import json
import os
import platform
import sys

import numpy as np

from . import __version__
from .config import load_pipeline_config
from .data.phantom import PhantomSpec, write_phantom_bundle
from .data.prep import load_cls_dataset, load_det_dataset, load_seg_dataset, \
    prep_dataset
from .data.metaimage import load_metaimage
from .metrics import confusion_and_scores, dice_score
from .models.classifier import NoduleClassifier, encode_labels
from .models.detector import NoduleDetector, write_detections_csv
from .models.segmenter import LungSegmenter
from .models.yolonet import anchors_from_boxes
from .overlay import render_overlay
from .pipeline import run_inference, write_case_report
from .volume import LungMask


def _write_manifest(out_dir, command, args_ns, config):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "args": {k: v for k, v in sorted(vars(args_ns).items()) if k != "func"},
        "config": config.to_dict() if config is not None else None,
        "seed": getattr(args_ns, "seed", None),
        "versions": {
            "lungct": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    try:
        import torch
        manifest["versions"]["torch"] = torch.__version__
    except ImportError:
        pass
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_from(ns):
    overrides = {}
    if getattr(ns, "seed", None) is not None:
        overrides["seed"] = ns.seed
    if getattr(ns, "cube", None) is not None:
        overrides["canonical_cube"] = ns.cube
    return load_pipeline_config(getattr(ns, "config", None), overrides)


def _train_overrides(ns, base):
    updates = {}
    for field, attr in (("epochs", "epochs"), ("batch_size", "batch_size"),
                        ("learning_rate", "learning_rate"),
                        ("max_steps", "max_steps"),
                        ("stop_at_metric", "stop_at"),
                        ("val_fraction", "val_fraction")):
        value = getattr(ns, attr, None)
        if value is not None:
            updates[field] = value
    return base.replace(**updates) if updates else base


def _add_common(parser, out_required=True):
    parser.add_argument("--config", help="YAML pipeline config layered over defaults")
    parser.add_argument("--seed", type=int, help="run seed (overrides config)")
    parser.add_argument("--out", required=out_required, help="output directory")


def _add_train_flags(parser):
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--learning-rate", type=float, dest="learning_rate")
    parser.add_argument("--max-steps", type=int, dest="max_steps")
    parser.add_argument("--stop-at", type=float, dest="stop_at",
                        help="stop once the monitored metric reaches this value")
    parser.add_argument("--val-fraction", type=float, dest="val_fraction")


def cmd_synth_gen(ns):
    config = _config_from(ns)
    seed = config.seed
    for i in range(ns.count):
        spec = PhantomSpec(seed=seed + i, cube_size=ns.phantom_cube,
                           nodule_count=ns.nodules,
                           malignant_fraction=ns.malignant_fraction)
        write_phantom_bundle(os.path.join(ns.out, f"bundle_{i:03d}"), spec)
    _write_manifest(ns.out, "synth-gen", ns, config)
    print(f"wrote {ns.count} phantom bundle(s) to {ns.out}")
    return 0


def cmd_prep(ns):
    config = _config_from(ns)
    summary = prep_dataset(ns.data, ns.out, cube_size=config.canonical_cube,
                           margin=config.crop_margin,
                           keep_empty_slices=ns.keep_empty_slices)
    _write_manifest(ns.out, "prep", ns, config)
    print(f"prepared {summary['n_cases']} case(s): {summary['n_slices']} slices, "
          f"{summary['n_patches']} patches at cube {summary['cube_size']}")
    return 0


def cmd_train_seg(ns):
    config = _config_from(ns)
    volumes, masks, _ = load_seg_dataset(ns.data)
    train = _train_overrides(ns, config.seg_train)
    cube = volumes[0].shape[0]
    est = LungSegmenter(variant=ns.variant, input_cube=cube, train=train,
                        random_state=config.seed, **config.segmenter)
    est.fit(volumes, masks)
    est.save(os.path.join(ns.out, "seg"))
    _write_manifest(ns.out, "train-seg", ns, config)
    print(f"seg checkpoint: best dice {est.best_metric_:.4f} "
          f"after {est.steps_run_} steps -> {ns.out}/seg.pt")
    return 0


def cmd_train_det(ns):
    config = _config_from(ns)
    images, labels, _ = load_det_dataset(ns.data)
    train = _train_overrides(ns, config.det_train)
    det_params = dict(config.detector)
    det_params.setdefault("input_size", ns.input_size)
    det_params.setdefault("width_mult", ns.width_mult)
    if ns.kmeans_anchors:
        sizes = []
        for img, lab in zip(images, labels):
            scale = det_params["input_size"] / max(img.shape)
            for row in np.asarray(lab).reshape(-1, 5):
                sizes.append([row[3] * img.shape[1] * scale,
                              row[4] * img.shape[0] * scale])
        det_params["anchors"] = anchors_from_boxes(sizes, random_state=config.seed)
    est = NoduleDetector(train=train, random_state=config.seed, **det_params)
    est.fit(images, labels)
    est.save(os.path.join(ns.out, "det"))
    _write_manifest(ns.out, "train-det", ns, config)
    print(f"det checkpoint: best mAP@50 {est.best_metric_:.4f} "
          f"after {est.steps_run_} steps -> {ns.out}/det.pt")
    return 0


def cmd_train_cls(ns):
    config = _config_from(ns)
    patches, labels = load_cls_dataset(ns.data)
    train = _train_overrides(ns, config.cls_train)
    est = NoduleClassifier(train=train, random_state=config.seed,
                           **config.classifier)
    est.fit(patches, labels)
    est.save(os.path.join(ns.out, "cls"))
    _write_manifest(ns.out, "train-cls", ns, config)
    print(f"cls checkpoint: best accuracy {est.best_metric_:.4f} "
          f"after {est.steps_run_} steps -> {ns.out}/cls.pt")
    return 0


def cmd_eval_seg(ns):
    config = _config_from(ns)
    volumes, masks, names = load_seg_dataset(ns.data)
    est = LungSegmenter.load(ns.ckpt)
    rows = []
    for name, vol, mask in zip(names, volumes, masks):
        pred = est.predict(vol)
        dice = dice_score(pred > 0, mask > 0)
        scores = confusion_and_scores(pred.ravel(), mask.ravel())
        rows.append((name, dice, scores.f1))
    mean_dice = float(np.mean([r[1] for r in rows]))
    os.makedirs(ns.out, exist_ok=True)
    with open(os.path.join(ns.out, "seg_eval.csv"), "w", encoding="utf-8") as fh:
        fh.write("series,dice,f1\n")
        for name, dice, f1 in rows:
            fh.write(f"{name},{dice:.6f},{'' if f1 is None else f'{f1:.6f}'}\n")
    with open(os.path.join(ns.out, "seg_eval.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"volumes: {len(rows)}\nmean_dice: {mean_dice:.6f}\n")
    _write_manifest(ns.out, "eval-seg", ns, config)
    print(f"eval-seg: mean dice {mean_dice:.4f} over {len(rows)} volume(s)")
    return 0


def cmd_eval_det(ns):
    config = _config_from(ns)
    images, labels, names = load_det_dataset(ns.data)
    est = NoduleDetector.load(ns.ckpt)
    result = est.evaluate(images, labels)
    os.makedirs(ns.out, exist_ok=True)
    detections = est.predict(images)
    write_detections_csv(os.path.join(ns.out, "det_eval_detections.csv"),
                         list(enumerate(detections)))
    overlay_dir = os.path.join(ns.out, "overlays")
    os.makedirs(overlay_dir, exist_ok=True)
    for name, img, dets in zip(names, images, detections):
        if dets:
            render_overlay(img, None, dets, [], os.path.join(overlay_dir,
                                                             name + ".png"))
    with open(os.path.join(ns.out, "det_eval.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"slices: {len(images)}\n")
        fh.write(f"map50: {result['map50']}\n")
        fh.write(f"map50_95: {result['map50_95']}\n")
    _write_manifest(ns.out, "eval-det", ns, config)
    print(f"eval-det: mAP@50 {result['map50']:.4f}, "
          f"mAP@50:95 {result['map50_95']:.4f} over {len(images)} slice(s)")
    return 0


def cmd_eval_cls(ns):
    config = _config_from(ns)
    patches, labels = load_cls_dataset(ns.data)
    est = NoduleClassifier.load(ns.ckpt)
    proba = est.predict_proba(patches)
    pred = proba.argmax(axis=1)
    truth = encode_labels(labels)
    scores = confusion_and_scores(pred, truth)
    os.makedirs(ns.out, exist_ok=True)
    with open(os.path.join(ns.out, "predictions.csv"), "w", encoding="utf-8") as fh:
        fh.write("series,index,p_benign,p_malignant,label\n")
        for i, (p, k) in enumerate(zip(proba, pred)):
            fh.write(f"eval,{i},{p[0]:.6f},{p[1]:.6f},"
                     f"{'malignant' if k else 'benign'}\n")
    fmt = lambda v: "undefined" if v is None else f"{v:.6f}"
    with open(os.path.join(ns.out, "cls_eval.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"patches: {len(labels)}\n")
        fh.write(f"accuracy: {fmt(scores.accuracy)}\n")
        fh.write(f"precision: {fmt(scores.precision)}\n")
        fh.write(f"recall: {fmt(scores.recall)}\n")
        fh.write(f"f1: {fmt(scores.f1)}\n")
    _write_manifest(ns.out, "eval-cls", ns, config)
    print(f"eval-cls: accuracy {scores.accuracy:.4f} over {len(labels)} patch(es)")
    return 0


def cmd_infer(ns):
    config = _config_from(ns)
    if ns.no_mask_gate:
        config.mask_gate = False
    seg = LungSegmenter.load(ns.seg_ckpt or config.seg_checkpoint)
    det = NoduleDetector.load(ns.det_ckpt or config.det_checkpoint)
    cls = NoduleClassifier.load(ns.cls_ckpt or config.cls_checkpoint)
    reference = None
    if ns.gt_mask:
        raw = load_metaimage(ns.gt_mask)
        reference = LungMask((raw.voxels > 0).astype(np.uint8), raw.spacing, raw.origin)
    report = run_inference(ns.input, config, seg, det, cls, reference_mask=reference)
    write_case_report(report, ns.out)

    if not report.degenerate and not ns.no_overlays:
        from .volume import clip_and_normalize_hu, crop_foreground, \
            resample_to_canonical
        from .pipeline import predict_lung_mask
        volume = load_metaimage(ns.input)
        canonical, _ = resample_to_canonical(clip_and_normalize_hu(volume),
                                             cube_size=config.canonical_cube)
        mask = predict_lung_mask(canonical, seg)
        crop_vol, crop_mask, _ = crop_foreground(canonical, mask,
                                                 margin=config.crop_margin)
        overlay_dir = os.path.join(ns.out, "overlays")
        os.makedirs(overlay_dir, exist_ok=True)
        by_slice = {}
        for d in report.detections:
            by_slice.setdefault(d.slice_index, []).append(d)
        for z, dets in sorted(by_slice.items()):
            render_overlay(crop_vol.voxels[z], crop_mask.voxels[z], dets,
                           [d.label for d in dets],
                           os.path.join(overlay_dir, f"slice_{z:04d}.png"))
    _write_manifest(ns.out, "infer", ns, config)
    n = len(report.detections)
    flag = " (degenerate: empty lung mask)" if report.degenerate else ""
    print(f"infer: {n} classified detection(s){flag} -> {ns.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lungct",
        description="Cascaded lung CT analysis: segment lungs, detect nodules "
                    "on axial slices, classify nodule malignancy.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate synthetic phantom bundles")
    _add_common(p)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--phantom-cube", type=int, default=64, dest="phantom_cube")
    p.add_argument("--nodules", type=int, default=4)
    p.add_argument("--malignant-fraction", type=float, default=0.5,
                   dest="malignant_fraction")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("prep", help="build training artifacts from case bundles")
    _add_common(p)
    p.add_argument("--data", required=True, help="root of case bundle directories")
    p.add_argument("--cube", type=int, help="canonical cube size override")
    p.add_argument("--keep-empty-slices", action="store_true",
                   dest="keep_empty_slices")
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train-seg", help="train the lung segmenter")
    _add_common(p)
    p.add_argument("--data", required=True, help="prep output directory")
    p.add_argument("--variant", choices=("plain", "residual"), default="residual")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_seg)

    p = sub.add_parser("train-det", help="train the nodule detector")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--input-size", type=int, default=256, dest="input_size")
    p.add_argument("--width-mult", type=float, default=0.5, dest="width_mult")
    p.add_argument("--kmeans-anchors", action="store_true", dest="kmeans_anchors",
                   help="fit anchors to the training boxes with k-means")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_det)

    p = sub.add_parser("train-cls", help="train the malignancy classifier")
    _add_common(p)
    p.add_argument("--data", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_cls)

    for name, fn in (("eval-seg", cmd_eval_seg), ("eval-det", cmd_eval_det),
                     ("eval-cls", cmd_eval_cls)):
        p = sub.add_parser(name, help=f"evaluate a checkpoint ({name[5:]})")
        _add_common(p)
        p.add_argument("--data", required=True)
        p.add_argument("--ckpt", required=True)
        p.set_defaults(func=fn)

    p = sub.add_parser("infer", help="run the full pipeline on one volume")
    _add_common(p)
    p.add_argument("--in", required=True, dest="input", help="input volume (.mhd)")
    p.add_argument("--cube", type=int, help="canonical cube size override")
    p.add_argument("--seg-ckpt", dest="seg_ckpt")
    p.add_argument("--det-ckpt", dest="det_ckpt")
    p.add_argument("--cls-ckpt", dest="cls_ckpt")
    p.add_argument("--gt-mask", dest="gt_mask",
                   help="reference lung mask for a Dice column in the report")
    p.add_argument("--no-mask-gate", action="store_true", dest="no_mask_gate")
    p.add_argument("--no-overlays", action="store_true", dest="no_overlays")
    p.set_defaults(func=cmd_infer)
    return parser


def cli_dispatch(argv):
    """Parse and run; returns the process exit code."""
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors exit 2
        return int(exc.code or 0)
    try:
        return ns.func(ns)
    except Exception as exc:
        error = {"error": type(exc).__name__, "message": str(exc),
                 "command": ns.command}
        print(json.dumps(error), file=sys.stderr)
        return 1


def main(argv=None):
    return cli_dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
