"""Baseline / +GCL / full comparison over several seeds."""

from __future__ import annotations

import dataclasses
import os
import time

import numpy as np

from . import evaluate, train

VARIANTS = {
    "baseline": dict(shape_stream=False, gradients_input=False, dual_task=False),
    "gcl": dict(shape_stream=True, gradients_input=True, dual_task=False),
    "full": dict(shape_stream=True, gradients_input=True, dual_task=True),
}
ABLATION_TOLERANCES = (1, 3, 5, 9, 12)


def run_variant(base_cfg, dataset, variant, seed, tolerances=ABLATION_TOLERANCES):
    cfg = dataclasses.replace(base_cfg, seed=seed, **VARIANTS[variant])
    t0 = time.perf_counter()
    result = train.train(cfg, dataset)
    _, val = dataset.split(cfg.val_fraction)
    rep = evaluate.evaluate_samples(result.params, result.model_config, val, tolerances)
    row = {"variant": variant, "seed": seed, "miou": 100 * rep.miou,
           "seconds": time.perf_counter() - t0}
    for t in tolerances:
        row[f"f@{t:g}px"] = 100 * rep.mean_f[t]
    return row


def run_ablation(base_cfg, dataset, seeds=(0, 1, 2), variants=tuple(VARIANTS), out_dir=None,
                 log=None):
    rows = []
    for variant in variants:
        for seed in seeds:
            row = run_variant(base_cfg, dataset, variant, seed)
            rows.append(row)
            if log:
                log(", ".join(f"{k}={v:.2f}" if isinstance(v, float) else f"{k}={v}"
                              for k, v in row.items()))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_rows(os.path.join(out_dir, "ablation.csv"), rows)
        from .report import plot_ablation
        plot_ablation(rows, os.path.join(out_dir, "ablation.png"))
    return rows


def summarize(rows):
    """Per-variant means of every numeric column."""
    out = {}
    for v in dict.fromkeys(r["variant"] for r in rows):
        sel = [r for r in rows if r["variant"] == v]
        out[v] = {k: float(np.mean([r[k] for r in sel])) for k in sel[0]
                  if k not in ("variant", "seed")}
    return out


def write_rows(path, rows):
    keys = list(rows[0])
    lines = [",".join(keys)]
    for r in rows:
        lines.append(",".join(f"{r[k]:.4f}" if isinstance(r[k], float) else str(r[k])
                              for k in keys))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
