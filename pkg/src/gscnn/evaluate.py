"""Checkpoint evaluation: metric CSVs plus figures."""

from __future__ import annotations

import os

import numpy as np

from . import netpbm, train
from .metrics import DEFAULT_TOLERANCES, IGNORE_LABEL, CropSpec, ReportAccumulator


def accumulate(preds, labels, num_classes, tolerances=DEFAULT_TOLERANCES, crop=None):
    acc = ReportAccumulator(num_classes, tolerances, crop)
    for p, g in zip(preds, labels):
        acc.add(p, g)
    return acc.report()


def evaluate_samples(params, mcfg, samples, tolerances=DEFAULT_TOLERANCES, crop=None,
                     use_gt=False):
    labels = np.stack([s.labels for s in samples])
    if use_gt:
        preds = np.where(labels == IGNORE_LABEL, 0, labels)
    else:
        preds = train.predict(params, mcfg, samples)
    return accumulate(preds, labels, mcfg.num_classes, tolerances, crop)


def _fmt(v):
    return "nan" if v is None or not np.isfinite(v) else f"{v:.6f}"


def write_class_csv(path, report, class_names=None):
    tols = list(report.per_class_f)
    k = len(report.per_class_iou)
    names = class_names or [str(i) for i in range(k)]
    lines = ["class,iou," + ",".join(f"f@{t:g}px" for t in tols)]
    for i in range(k):
        row = [names[i], _fmt(report.per_class_iou[i])]
        row += [_fmt(report.per_class_f[t][i]) for t in tols]
        lines.append(",".join(row))
    lines.append(",".join(["mean", _fmt(report.miou)] + [_fmt(report.mean_f[t]) for t in tols]))
    lines.append(",".join(["pixel_accuracy", _fmt(report.pixel_accuracy)] + [""] * len(tols)))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def write_crop_csv(path, report):
    lines = ["factor,miou"] + [f"{c},{_fmt(m)}" for c, m in report.crop_curve]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def evaluate_checkpoint(checkpoint, data_dir, out_dir, tolerances=DEFAULT_TOLERANCES,
                        crop=None, split="val", use_gt=False, figures=True):
    """Evaluate ``checkpoint`` on ``data_dir``; writes CSVs (and PNGs) into ``out_dir``."""
    ck = train.load_checkpoint(checkpoint) if isinstance(checkpoint, str) else checkpoint
    dataset = train.Dataset.from_dir(data_dir)
    if dataset.num_classes != ck.num_classes:
        raise ValueError(f"class-count mismatch: checkpoint has {ck.num_classes} classes, "
                         f"dataset {data_dir} has {dataset.num_classes}")
    tr, va = dataset.split(ck.config.val_fraction)
    samples = {"val": va, "train": tr, "all": dataset.samples}[split]
    if not samples:
        raise ValueError(f"split {split!r} of {data_dir} is empty")
    crop = crop or ck.config.crop
    mcfg, params = train.restore_model(ck)
    report = evaluate_samples(params, mcfg, samples, tolerances, crop, use_gt)
    os.makedirs(out_dir, exist_ok=True)
    write_class_csv(os.path.join(out_dir, "per_class.csv"), report)
    write_crop_csv(os.path.join(out_dir, "crops.csv"), report)
    if figures:
        from . import report as R
        R.plot_report(report, out_dir)
    return report


def infer_image(checkpoint, image_path, out_path, boundary_path=None):
    ck = train.load_checkpoint(checkpoint) if isinstance(checkpoint, str) else checkpoint
    mcfg, params = train.restore_model(ck)
    from .data import make_sample
    image = netpbm.bytes_to_image(netpbm.read_ppm(image_path))
    h, w = image.shape[-2:]
    sample = make_sample(image, np.zeros((h, w), np.int64))
    pred, bound = train.predict(params, mcfg, [sample], with_boundary=True)
    netpbm.write_pgm(out_path, pred[0].astype(np.uint8))
    if boundary_path is not None:
        if bound is None:
            raise ValueError("this checkpoint has no shape stream; no boundary map to dump")
        netpbm.write_pgm(boundary_path, np.rint(np.clip(bound[0], 0, 1) * 255).astype(np.uint8))
    return pred[0], (None if bound is None else bound[0])
