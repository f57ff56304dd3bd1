"""Training objective: balanced boundary BCE, segmentation CE and the
dual-task regularizer coupling the two predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from . import tensor as T
from .fusion import CategoricalMap
from .tensor import Tensor

PROB_CLAMP = 1e-7
IGNORE_LABEL = 255


@dataclass
class LossConfig:
    bce_weight: float = 20.0
    ce_weight: float = 1.0
    reg_boundary_weight: float = 1.0
    reg_semantic_weight: float = 1.0
    temperature: float = 1.0
    threshold: float = 0.8
    potential_sigma: float = 1.0
    potential_eps: float = 1e-3
    gumbel_noise: bool = True
    # "union" or "intersection" of the two potentials' supports
    support: str = "union"

    def __post_init__(self):
        for name in ("bce_weight", "ce_weight", "reg_boundary_weight", "reg_semantic_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.temperature <= 0 or self.potential_sigma <= 0:
            raise ValueError("temperature and potential_sigma must be positive")
        if self.support not in ("union", "intersection"):
            raise ValueError(f"support must be 'union' or 'intersection', got {self.support!r}")


@dataclass
class LossBreakdown:
    bce: Tensor
    ce: Tensor
    reg_fwd: Tensor
    reg_bwd: Tensor
    total: Tensor

    FIELDS = ("bce", "ce", "reg_fwd", "reg_bwd", "total")

    def values(self):
        # + 0.0 folds a negative zero into 0.0 for stable logs
        return {k: float(getattr(self, k).data) + 0.0 for k in self.FIELDS}


def _valid_mask(labels, num_classes, ignore_label):
    labels = np.asarray(labels)
    return (labels != ignore_label) & (labels >= 0) & (labels < num_classes)


def balanced_bce(s, gt_boundary):
    """Class-balanced BCE: boundary pixels weighted by the non-boundary fraction of each map."""
    gt = np.asarray(gt_boundary, dtype=s.dtype)
    if gt.size == 0 or s.data.size == 0:
        raise ValueError("balanced_bce: empty boundary map")
    if gt.size != s.data.size:
        raise ValueError(f"balanced_bce: shapes {s.shape} vs {gt.shape}")
    gt = gt.reshape(s.shape)
    if s.ndim == 4:
        beta = 1.0 - gt.mean(axis=(1, 2, 3), keepdims=True)
    else:
        beta = 1.0 - gt.mean()
    sc = T.clamp(s, PROB_CLAMP, 1.0 - PROB_CLAMP)
    pos = beta * gt
    neg = (1.0 - beta) * (1.0 - gt)
    return -(T.log(sc) * pos + T.log(1.0 - sc) * neg).mean()


def log_probs(f):
    """Clamped per-pixel log-probabilities of a CategoricalMap."""
    return T.clamp(ops.log_softmax_channels(f.logits), math.log(PROB_CLAMP),
                   math.log1p(-PROB_CLAMP))


def _masked_ce(f, labels, mask):
    count = int(mask.sum())
    if count == 0:
        return None
    target = ops.one_hot(labels, f.num_classes, dtype=f.logits.dtype)
    target = target * np.expand_dims(mask, -3)
    return -(log_probs(f) * target).sum() * (1.0 / count)


def cross_entropy(f, labels, ignore_label=IGNORE_LABEL):
    labels = np.asarray(labels)
    if labels.shape != f.logits.shape[:-3] + f.logits.shape[-2:]:
        raise ValueError(f"cross_entropy: labels {labels.shape} vs logits {f.logits.shape}")
    loss = _masked_ce(f, labels, _valid_mask(labels, f.num_classes, ignore_label))
    if loss is None:
        raise ValueError("cross_entropy: every pixel is ignored")
    return loss


def potential_from_onehot(onehot, sigma, valid=None):
    """Root-sum-square of per-class edge magnitudes of the blurred one-hot map, over sqrt(2)."""
    if valid is not None:
        onehot = onehot * np.expand_dims(valid, -3).astype(onehot.dtype)
    mag = ops.sobel_gradient_magnitude(ops.gaussian_blur(onehot, sigma))
    return T.sqrt((mag * mag).sum(axis=-3)) * (1.0 / math.sqrt(2.0))


def boundary_potential(f, cfg, noise=False, rng=None, valid=None, soft=False):
    hard = ops.gumbel_hard_softmax(f.logits, cfg.temperature, noise=noise, rng=rng, soft=soft)
    return potential_from_onehot(hard, cfg.potential_sigma, valid)


def gt_boundary_potential(labels, num_classes, cfg, ignore_label=IGNORE_LABEL, dtype=np.float32):
    labels = np.asarray(labels)
    onehot = Tensor(ops.one_hot(labels, num_classes, dtype=dtype), dtype=None)
    return potential_from_onehot(onehot, cfg.potential_sigma,
                                 _valid_mask(labels, num_classes, ignore_label))


def reg_loss_boundary(potential, gt_potential, eps=1e-3, support="union", valid=None):
    """Mean absolute gap between two potentials where either exceeds ``eps``."""
    gt = gt_potential.data if isinstance(gt_potential, Tensor) else np.asarray(gt_potential)
    if gt.shape != potential.shape:
        raise ValueError(f"reg_loss_boundary: shapes {potential.shape} vs {gt.shape}")
    a, b = potential.data > eps, gt > eps
    mask = (a | b) if support == "union" else (a & b)
    if valid is not None:
        mask &= np.asarray(valid, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        return potential.sum() * 0.0
    diff = T.tabs(potential - gt.astype(potential.dtype))
    return (diff * mask.astype(potential.dtype)).sum() * (1.0 / count)


def reg_loss_semantic(s, f, labels, ignore_label=IGNORE_LABEL, threshold=0.8):
    """Cross-entropy over pixels the boundary map marks as confident (s > threshold)."""
    labels = np.asarray(labels)
    sel = s.data.reshape(labels.shape) > threshold
    mask = sel & _valid_mask(labels, f.num_classes, ignore_label)
    loss = _masked_ce(f, labels, mask)
    if loss is None:
        return f.logits.sum() * 0.0
    return loss


def total_loss(s, f, labels, gt_boundary, cfg, rng=None, ignore_label=IGNORE_LABEL,
               soft=False):
    """Weighted sum of all four terms. ``s`` may be None (no shape stream)."""
    labels = np.asarray(labels)
    zero = f.logits.sum() * 0.0
    bce = balanced_bce(s, gt_boundary) if s is not None else zero
    ce = cross_entropy(f, labels, ignore_label)

    if cfg.reg_boundary_weight > 0:
        valid = _valid_mask(labels, f.num_classes, ignore_label)
        pot = boundary_potential(f, cfg, noise=cfg.gumbel_noise and rng is not None, rng=rng,
                                 valid=valid, soft=soft)
        gt_pot = gt_boundary_potential(labels, f.num_classes, cfg, ignore_label,
                                       dtype=f.logits.dtype)
        reg_fwd = reg_loss_boundary(pot, gt_pot, cfg.potential_eps, cfg.support, valid)
    else:
        reg_fwd = zero
    if cfg.reg_semantic_weight > 0 and s is not None:
        reg_bwd = reg_loss_semantic(s, f, labels, ignore_label, cfg.threshold)
    else:
        reg_bwd = zero

    total = (bce * cfg.bce_weight + ce * cfg.ce_weight
             + reg_fwd * cfg.reg_boundary_weight + reg_bwd * cfg.reg_semantic_weight)
    return LossBreakdown(bce=bce, ce=ce, reg_fwd=reg_fwd, reg_bwd=reg_bwd, total=total)


def loss_gradcheck_cases(rng):
    """Float64 gradient checks for each loss term."""
    k, h, w = 3, 8, 8
    labels = rng.integers(0, k, (2, h, w))
    labels[:, 0, :3] = IGNORE_LABEL
    cfg = LossConfig()

    def leaf(*shape, scale=1.0):
        return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)

    logits = leaf(2, k, h, w, scale=2.0)
    z = leaf(2, 1, h, w, scale=2.0)
    gt_b = (rng.random((2, 1, h, w)) < 0.3).astype(np.float64)

    cases = [
        ("balanced_bce", lambda z: balanced_bce(T.sigmoid(z), gt_b), [z]),
        ("cross_entropy",
         lambda x: cross_entropy(CategoricalMap.from_logits(x), labels), [logits]),
        ("boundary_potential(soft)", lambda x: (boundary_potential(
            CategoricalMap.from_logits(x), cfg, soft=True) * _fixed_weights(x.shape)).sum(),
         [logits]),
    ]
    gt_pot = gt_boundary_potential(labels, k, cfg, dtype=np.float64)
    cases.append(("reg_loss_boundary", lambda x: reg_loss_boundary(
        boundary_potential(CategoricalMap.from_logits(x), cfg, soft=True), gt_pot,
        cfg.potential_eps), [logits]))
    s_fixed = Tensor(rng.random((2, 1, h, w)), dtype=np.float64)
    cases.append(("reg_loss_semantic", lambda x: reg_loss_semantic(
        s_fixed, CategoricalMap.from_logits(x), labels, threshold=0.5), [logits]))
    return cases


def _fixed_weights(shape):
    n, _, h, w = shape
    return np.cos(np.arange(n * h * w).reshape(n, h, w) * 0.37)
