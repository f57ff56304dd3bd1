"""Matplotlib figures for evaluation and ablation reports (PNG, Agg backend)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_report(report, out_dir):
    paths = []
    k = len(report.per_class_iou)
    x = np.arange(k)
    tols = list(report.per_class_f)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / (1 + len(tols))
    ax.bar(x, np.nan_to_num(report.per_class_iou), width, label="IoU")
    for i, t in enumerate(tols, start=1):
        ax.bar(x + i * width, np.nan_to_num(report.per_class_f[t]), width, label=f"F@{t:g}px")
    ax.set_xticks(x + width * len(tols) / 2, [str(i) for i in range(k)])
    ax.set_xlabel("class")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7, ncol=3)
    paths.append(_save(fig, os.path.join(out_dir, "per_class.png")))

    if report.crop_curve:
        fig, ax = plt.subplots(figsize=(4, 3))
        c, m = zip(*report.crop_curve)
        ax.plot(c, m, marker="o")
        ax.set_xlabel("crop factor (px)")
        ax.set_ylabel("mIoU")
        paths.append(_save(fig, os.path.join(out_dir, "crops.png")))

    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot(tols, [report.mean_f[t] for t in tols], marker="o")
    ax.set_xlabel("tolerance (px)")
    ax.set_ylabel("mean boundary F")
    ax.set_ylim(0, 1.05)
    paths.append(_save(fig, os.path.join(out_dir, "fscore_vs_tolerance.png")))
    return paths


def plot_ablation(rows, out_path, metrics=("miou", "f@1px")):
    """Grouped bars of per-variant means with per-seed points."""
    variants = list(dict.fromkeys(r["variant"] for r in rows))
    fig, axes = plt.subplots(1, len(metrics), figsize=(4 * len(metrics), 3))
    axes = np.atleast_1d(axes)
    for ax, m in zip(axes, metrics):
        for i, v in enumerate(variants):
            vals = [r[m] for r in rows if r["variant"] == v]
            ax.bar(i, np.mean(vals), 0.6, alpha=0.7)
            ax.scatter([i] * len(vals), vals, color="k", s=8)
        ax.set_xticks(range(len(variants)), variants, rotation=20, fontsize=8)
        ax.set_title(m)
    return _save(fig, out_path)


def plot_loss_curve(csv_path, out_path):
    data = np.genfromtxt(csv_path, delimiter=",", names=True)
    fig, ax = plt.subplots(figsize=(5, 3))
    for name in ("bce", "ce", "reg_fwd", "reg_bwd", "total"):
        ax.plot(data["step"], data[name], label=name, lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.legend(fontsize=7)
    return _save(fig, out_path)
