"""Region and boundary quality: IoU, boundary F-score with pixel slack,
and mIoU over progressively tighter centre crops."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

IGNORE_LABEL = 255
DEFAULT_TOLERANCES = (3, 5, 9, 12)
_FAR = 1e12


# ------------------------------------------------------------------ boundaries
def gt_boundary_from_mask(labels, radius=1, ignore_label=IGNORE_LABEL):
    """Pixels with a differently-labelled, non-ignored pixel within Chebyshev
    distance ``radius``. Ignored pixels are never boundary and never trigger."""
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    labels = np.asarray(labels)
    h, w = labels.shape[-2:]
    pad = [(0, 0)] * (labels.ndim - 2) + [(radius, radius), (radius, radius)]
    padded = np.pad(labels.astype(np.int64), pad, constant_values=ignore_label)
    valid = labels != ignore_label
    out = np.zeros(labels.shape, dtype=bool)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx == 0:
                continue
            nb = padded[..., radius + dy:radius + dy + h, radius + dx:radius + dx + w]
            out |= (nb != labels) & (nb != ignore_label)
    return out & valid


def distance_transform(features):
    """Exact Euclidean distance from every pixel to the nearest True pixel.

    Two passes: 1-D distances down each column, then the exact lower envelope
    min_k(g[i,k]² + (j-k)²) along each row. Returns inf where no feature exists.
    """
    f = np.asarray(features, dtype=bool)
    h, w = f.shape
    g = np.full((h, w), _FAR)
    run = np.full(w, _FAR)
    for i in range(h):
        run = np.where(f[i], 0.0, run + 1.0)
        g[i] = run
    run = np.full(w, _FAR)
    for i in range(h - 1, -1, -1):
        run = np.where(f[i], 0.0, run + 1.0)
        g[i] = np.minimum(g[i], run)
    g = np.minimum(g, _FAR)
    cols = np.arange(w)
    offs = (cols[:, None] - cols[None, :]).astype(np.float64) ** 2  # (j, k)
    d2 = (g * g)[:, None, :] + offs[None, :, :]  # (i, j, k)
    d2 = d2.min(axis=-1)
    out = np.sqrt(d2)
    out[d2 >= _FAR] = np.inf
    return out


def class_boundary(labels, k, ignore_label=IGNORE_LABEL):
    """Pixels of class ``k`` touching another non-ignored label (radius 1)."""
    return gt_boundary_from_mask(labels, 1, ignore_label) & (np.asarray(labels) == k)


# ------------------------------------------------------------------------ IoU
def confusion_matrix(pred, gt, num_classes, ignore_label=IGNORE_LABEL):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    valid = (gt != ignore_label) & (gt >= 0) & (gt < num_classes)
    p = pred[valid].astype(np.int64)
    if np.any((p < 0) | (p >= num_classes)):
        raise ValueError("prediction contains labels outside [0, K)")
    idx = gt[valid].astype(np.int64) * num_classes + p
    return np.bincount(idx, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def iou_from_confusion(cm):
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / np.maximum(union, 1), np.nan)
    valid = ~np.isnan(iou)
    miou = float(iou[valid].mean()) if valid.any() else float("nan")
    return iou, miou


def iou_report(pred, gt, num_classes, ignore_label=IGNORE_LABEL):
    """Per-class IoU (NaN for classes absent from both maps) and their mean."""
    cm = confusion_matrix(pred, gt, num_classes, ignore_label)
    if cm.sum() == 0:
        raise ValueError("iou_report: every pixel carries the ignore label")
    return iou_from_confusion(cm)


# ----------------------------------------------------------------- F-score
def tolerance_from_fraction(fraction, height, width, basis="diagonal"):
    """Convert a fractional slack to pixels against the image diagonal (or a side)."""
    if basis == "diagonal":
        ref = math.hypot(height, width)
    elif basis == "width":
        ref = width
    elif basis == "height":
        ref = height
    else:
        raise ValueError(f"unknown basis {basis!r}")
    return fraction * ref


def boundary_counts(pred, gt, num_classes, tolerances, ignore_mask=None,
                    ignore_label=IGNORE_LABEL):
    """Per-class boundary match counts.

    Returns (present[K], counts[T, K, 4]) where the last axis holds
    (matched pred, total pred, matched gt, total gt) boundary pixels.
    """
    pred = np.asarray(pred).astype(np.int64)
    gt = np.asarray(gt).astype(np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if ignore_mask is None:
        ignore_mask = gt == ignore_label
    ignore_mask = np.asarray(ignore_mask, dtype=bool)
    pred = np.where(ignore_mask, ignore_label, pred)
    gt = np.where(ignore_mask, ignore_label, gt)

    tolerances = list(tolerances)
    counts = np.zeros((len(tolerances), num_classes, 4), dtype=np.int64)
    present = np.zeros(num_classes, dtype=bool)
    pred_edges = gt_boundary_from_mask(pred, 1, ignore_label)
    gt_edges = gt_boundary_from_mask(gt, 1, ignore_label)
    for k in range(num_classes):
        if not ((pred == k).any() or (gt == k).any()):
            continue
        present[k] = True
        bp = pred_edges & (pred == k)
        bg = gt_edges & (gt == k)
        n_p, n_g = int(bp.sum()), int(bg.sum())
        counts[:, k, 1] = n_p
        counts[:, k, 3] = n_g
        if n_p == 0 or n_g == 0:
            continue
        d_to_gt = distance_transform(bg)[bp]
        d_to_pred = distance_transform(bp)[bg]
        for ti, tol in enumerate(tolerances):
            counts[ti, k, 0] = int((d_to_gt <= tol).sum())
            counts[ti, k, 2] = int((d_to_pred <= tol).sum())
    return present, counts


def fscore_from_counts(present, counts):
    """F per class from match counts; NaN for classes absent from both maps."""
    mp, n_p, mg, n_g = (counts[..., i].astype(np.float64) for i in range(4))
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(n_p > 0, mp / np.maximum(n_p, 1), 0.0)
        recall = np.where(n_g > 0, mg / np.maximum(n_g, 1), 0.0)
        f = np.where(precision + recall > 0,
                     2 * precision * recall / np.maximum(precision + recall, 1e-300), 0.0)
    # a present class with no boundary in either map agrees perfectly
    f = np.where((n_p == 0) & (n_g == 0), 1.0, f)
    f = np.where(present, f, np.nan)
    return f, precision, recall


def boundary_fscore(pred, gt, num_classes, tolerance_px, ignore_mask=None,
                    ignore_label=IGNORE_LABEL):
    """Per-class boundary F at ``tolerance_px`` and the mean over present classes."""
    if tolerance_px < 0:
        raise ValueError("tolerance_px must be >= 0")
    present, counts = boundary_counts(pred, gt, num_classes, [tolerance_px], ignore_mask,
                                      ignore_label)
    f, _, _ = fscore_from_counts(present, counts[0])
    return f, _nanmean(f)


def boundary_precision_recall(pred, gt, num_classes, tolerance_px, ignore_mask=None,
                              ignore_label=IGNORE_LABEL):
    present, counts = boundary_counts(pred, gt, num_classes, [tolerance_px], ignore_mask,
                                      ignore_label)
    _, p, r = fscore_from_counts(present, counts[0])
    return np.where(present, p, np.nan), np.where(present, r, np.nan)


def _nanmean(a):
    a = np.asarray(a, dtype=np.float64)
    ok = ~np.isnan(a)
    return float(a[ok].mean()) if ok.any() else float("nan")


# -------------------------------------------------------------- crop curve
@dataclass
class CropSpec:
    base_margin: int = 6
    factors: tuple = (0, 3, 6, 9)

    def window(self, height, width, factor):
        """(row slice, col slice) after the base crop and factor ``factor``."""
        top = factor
        bottom = height - self.base_margin - factor
        left = self.base_margin + 2 * factor
        right = width - self.base_margin - 2 * factor
        if top >= bottom or left >= right or factor < 0:
            raise ValueError(
                f"crop factor {factor} leaves an empty crop on a {height}×{width} image "
                f"(base margin {self.base_margin})")
        return slice(top, bottom), slice(left, right)


def distance_based_eval(pred, gt, crop, factors=None, num_classes=None,
                        ignore_label=IGNORE_LABEL):
    """[(factor, mIoU)] on centre crops of a single prediction/GT pair."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    factors = crop.factors if factors is None else factors
    k = num_classes if num_classes is not None else int(
        max(pred.max(), gt[gt != ignore_label].max(initial=0)) + 1)
    curve = []
    for c in factors:
        rows, cols = crop.window(*gt.shape[-2:], c)
        _, miou = iou_report(pred[..., rows, cols], gt[..., rows, cols], k, ignore_label)
        curve.append((c, miou))
    return curve


# ------------------------------------------------------------- dataset report
@dataclass
class EvalReport:
    per_class_iou: np.ndarray
    miou: float
    per_class_f: dict = field(default_factory=dict)
    mean_f: dict = field(default_factory=dict)
    crop_curve: list = field(default_factory=list)
    pixel_accuracy: float = float("nan")


class ReportAccumulator:
    """Accumulates confusion matrices and boundary counts over many images."""

    def __init__(self, num_classes, tolerances=DEFAULT_TOLERANCES, crop=None,
                 ignore_label=IGNORE_LABEL):
        self.k = num_classes
        self.tolerances = list(tolerances)
        self.crop = crop
        self.ignore_label = ignore_label
        self.cm = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.present = np.zeros(num_classes, dtype=bool)
        self.counts = np.zeros((len(self.tolerances), num_classes, 4), dtype=np.int64)
        self.crop_cms = {c: np.zeros_like(self.cm) for c in (crop.factors if crop else ())}

    def add(self, pred, gt):
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        self.cm += confusion_matrix(pred, gt, self.k, self.ignore_label)
        present, counts = boundary_counts(pred, gt, self.k, self.tolerances,
                                          ignore_label=self.ignore_label)
        self.present |= present
        self.counts += counts
        for c in self.crop_cms:
            rows, cols = self.crop.window(*gt.shape[-2:], c)
            self.crop_cms[c] += confusion_matrix(pred[rows, cols], gt[rows, cols], self.k,
                                                 self.ignore_label)

    def report(self):
        if self.cm.sum() == 0:
            raise ValueError("no labelled pixels were accumulated")
        iou, miou = iou_from_confusion(self.cm)
        per_f, mean_f = {}, {}
        for ti, tol in enumerate(self.tolerances):
            f, _, _ = fscore_from_counts(self.present, self.counts[ti])
            per_f[tol] = f
            mean_f[tol] = _nanmean(f)
        curve = [(c, iou_from_confusion(cm)[1]) for c, cm in self.crop_cms.items()]
        acc = float(np.trace(self.cm) / self.cm.sum())
        return EvalReport(per_class_iou=iou, miou=miou, per_class_f=per_f, mean_f=mean_f,
                          crop_curve=curve, pixel_accuracy=acc)
