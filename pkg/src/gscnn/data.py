"""Synthetic segmentation scenes with thin structures.

Each sample paints class-coloured rectangles and ellipses, then small blobs,
then thin bars (1-3 px) on top. Class 0 is background; a void frame around
the image carries the ignore label.
"""

from __future__ import annotations

import colorsys
import dataclasses
import hashlib
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import netpbm, ops
from .metrics import IGNORE_LABEL, gt_boundary_from_mask


@dataclass
class DatasetSpec:
    seed: int = 0
    count: int = 250
    height: int = 64
    width: int = 64
    num_classes: int = 5
    big_shapes: tuple = (1, 2)      # extra rectangles/ellipses beyond one per class
    big_size: tuple = (12, 30)
    blobs: tuple = (1, 3)
    blob_radius: tuple = (2, 4)
    bars: tuple = (1, 3)
    bar_width: tuple = (1, 3)
    bar_length: tuple = (18, 48)
    noise: float = 0.03
    color_jitter: float = 0.06
    ignore_border: int = 2
    supervision_radius: int = 2

    def validate(self):
        if self.num_classes < 3:
            raise ValueError(f"num_classes must be >= 3, got {self.num_classes}")
        if self.height % 8 or self.width % 8:
            raise ValueError(f"height and width must be divisible by 8, got "
                             f"{self.height}×{self.width}")
        if self.count < 1:
            raise ValueError("count must be positive")
        small = min(self.height, self.width)
        for name in ("big_size", "bar_length"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 1:
                raise ValueError(f"{name} range {lo}..{hi} is invalid")
            if name == "big_size" and hi > small - 2 * self.ignore_border:
                raise ValueError(
                    f"{name} up to {hi} px does not fit a {self.height}×{self.width} canvas")
        if 2 * self.blob_radius[1] + 1 > small:
            raise ValueError("blob radius does not fit the canvas")
        if self.ignore_border * 2 >= small:
            raise ValueError("ignore border covers the whole image")

    def digest(self):
        text = repr(sorted(dataclasses.asdict(self).items()))
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class SegSample:
    image: np.ndarray          # (3, H, W) float32 in [0, 1]
    labels: np.ndarray         # (H, W) int64, ignore = 255
    gt_boundary: np.ndarray    # (H, W) float32 in {0, 1}
    image_grad: np.ndarray     # (1, H, W) float32 in {0, 1}


def class_palette(num_classes):
    cols = [(0.35, 0.35, 0.38)]
    for k in range(1, num_classes):
        h = (k - 1) / (num_classes - 1)
        cols.append(colorsys.hsv_to_rgb(h, 0.65, 0.85))
    return np.array(cols, dtype=np.float64)


# ------------------------------------------------------------------ painting
def _grid(h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    return yy + 0.5, xx + 0.5


def _rect(rng, spec, yy, xx):
    hh, ww = rng.integers(spec.big_size[0], spec.big_size[1] + 1, size=2)
    y0 = rng.integers(0, spec.height - hh + 1)
    x0 = rng.integers(0, spec.width - ww + 1)
    return (yy >= y0) & (yy < y0 + hh) & (xx >= x0) & (xx < x0 + ww)


def _ellipse(rng, spec, yy, xx, size=None):
    lo, hi = size or spec.big_size
    ry, rx = rng.uniform(lo / 2, hi / 2, size=2)
    cy = rng.uniform(0, spec.height)
    cx = rng.uniform(0, spec.width)
    t = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(t) + dy * np.sin(t)
    v = -dx * np.sin(t) + dy * np.cos(t)
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _bar(rng, spec, yy, xx):
    width = rng.integers(spec.bar_width[0], spec.bar_width[1] + 1)
    length = rng.uniform(*spec.bar_length)
    # mostly upright, like poles and sign posts
    t = rng.uniform(-0.35, 0.35) + (np.pi / 2 if rng.random() < 0.3 else 0.0)
    cy = rng.uniform(spec.height * 0.2, spec.height * 0.8)
    cx = rng.uniform(spec.width * 0.15, spec.width * 0.85)
    dir_y, dir_x = np.cos(t), np.sin(t)
    dy, dx = yy - cy, xx - cx
    along = dy * dir_y + dx * dir_x
    across = -dy * dir_x + dx * dir_y
    return (np.abs(along) <= length / 2) & (np.abs(across) <= width / 2)


def generate_sample(spec, index, with_bars=False):
    """One (image, labels) pair; deterministic in (spec.seed, index).

    ``with_bars`` also returns the mask of pixels painted by thin bars.
    """
    rng = np.random.default_rng([spec.seed, index])
    h, w, k = spec.height, spec.width, spec.num_classes
    yy, xx = _grid(h, w)
    palette = class_palette(k)
    labels = np.zeros((h, w), dtype=np.int64)
    image = np.empty((h, w, 3))
    image[:] = palette[0] + rng.uniform(-spec.color_jitter, spec.color_jitter, 3)

    def paint(mask, cls):
        labels[mask] = cls
        image[mask] = np.clip(
            palette[cls] + rng.uniform(-spec.color_jitter, spec.color_jitter, 3), 0, 1)

    big = list(rng.permutation(np.arange(1, k)))
    big += list(rng.integers(1, k, size=rng.integers(spec.big_shapes[0], spec.big_shapes[1] + 1)))
    for cls in big:
        mask = _rect(rng, spec, yy, xx) if rng.random() < 0.5 else _ellipse(rng, spec, yy, xx)
        paint(mask, int(cls))
    for _ in range(rng.integers(spec.blobs[0], spec.blobs[1] + 1)):
        r = spec.blob_radius
        paint(_ellipse(rng, spec, yy, xx, size=(2 * r[0], 2 * r[1])), int(rng.integers(1, k)))
    bars = np.zeros((h, w), dtype=bool)
    for _ in range(rng.integers(spec.bars[0], spec.bars[1] + 1)):
        mask = _bar(rng, spec, yy, xx)
        bars |= mask
        paint(mask, int(rng.integers(1, k)))

    image = image.transpose(2, 0, 1) + rng.normal(0.0, spec.noise, (3, h, w))
    image = np.clip(image, 0.0, 1.0)
    # quantise so files on disk round-trip exactly
    image = (np.rint(image * 255.0) / 255.0).astype(np.float32)
    b = spec.ignore_border
    if b:
        labels[:b, :] = IGNORE_LABEL
        labels[-b:, :] = IGNORE_LABEL
        labels[:, :b] = IGNORE_LABEL
        labels[:, -b:] = IGNORE_LABEL
    if with_bars:
        return image, labels, bars
    return image, labels


def make_sample(image, labels, supervision_radius=2):
    return SegSample(
        image=np.asarray(image, dtype=np.float32),
        labels=np.asarray(labels, dtype=np.int64),
        gt_boundary=gt_boundary_from_mask(labels, supervision_radius, IGNORE_LABEL)
        .astype(np.float32),
        image_grad=image_gradient(image),
    )


def generate_dataset(spec):
    spec.validate()
    return [make_sample(*generate_sample(spec, i), spec.supervision_radius)
            for i in range(spec.count)]


# ---------------------------------------------------------- image gradients
CANNY_SIGMA = 1.0
CANNY_HIGH = 0.2
CANNY_LOW = 0.1
_GRAY = np.array([0.299, 0.587, 0.114])


def image_gradient(image):
    """Binary Canny-style edge map (1, H, W) of an RGB image in [0, 1].

    Grayscale, Gaussian sigma 1, Sobel magnitude, non-maximum suppression,
    then hysteresis with thresholds 0.2 / 0.1 of the maximum magnitude.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.shape[0] != 3:
        raise ValueError(f"expected a 3×H×W image, got {img.shape}")
    gray = np.tensordot(_GRAY, img, axes=1)
    h, w = gray.shape
    g = ops.gaussian_matrix(h, CANNY_SIGMA) @ gray @ ops.gaussian_matrix(w, CANNY_SIGMA).T
    sh, dh = ops._sobel_matrices(h)
    sw, dw = ops._sobel_matrices(w)
    gx = sh @ g @ dw.T
    gy = dh @ g @ sw.T
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak < 1e-6:
        return np.zeros((1, h, w), dtype=np.float32)

    # quantise direction to 0/45/90/135 degrees; (dy, dx) step along the gradient
    ang = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    sector = np.mod(np.rint(ang / 45.0).astype(int), 4)
    steps = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    padded = np.pad(mag, 1)
    keep = np.zeros_like(mag, dtype=bool)
    for s, (dy, dx) in steps.items():
        nxt = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        prv = padded[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        # strict on one side so a symmetric ridge keeps exactly one pixel
        keep |= (sector == s) & (mag > prv) & (mag >= nxt)

    strong = keep & (mag >= CANNY_HIGH * peak)
    weak = keep & (mag >= CANNY_LOW * peak)
    comp, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return np.zeros((1, h, w), dtype=np.float32)
    hit = np.zeros(n + 1, dtype=bool)
    hit[np.unique(comp[strong])] = True
    hit[0] = False
    return hit[comp][None].astype(np.float32)


# -------------------------------------------------------------------- disk
MANIFEST = "manifest.txt"


def write_dataset(spec, out_dir):
    spec.validate()
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "labels"), exist_ok=True)
    for i in range(spec.count):
        image, labels = generate_sample(spec, i)
        netpbm.write_ppm(os.path.join(out_dir, "images", f"{i:04d}.ppm"),
                         netpbm.image_to_bytes(image))
        netpbm.write_pgm(os.path.join(out_dir, "labels", f"{i:04d}.pgm"), labels)
    lines = [f"count = {spec.count}", f"height = {spec.height}", f"width = {spec.width}",
             f"num_classes = {spec.num_classes}", f"ignore_label = {IGNORE_LABEL}",
             f"supervision_radius = {spec.supervision_radius}", f"seed = {spec.seed}",
             f"spec_hash = {spec.digest()}"]
    with open(os.path.join(out_dir, MANIFEST), "w") as f:
        f.write("\n".join(lines) + "\n")


def read_manifest(data_dir):
    path = os.path.join(data_dir, MANIFEST)
    if not os.path.isdir(data_dir):
        raise FileNotFoundError(f"dataset directory not found: {data_dir}")
    if not os.path.exists(path):
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    out = {}
    with open(path) as f:
        for line in f:
            if "=" in line:
                key, value = (p.strip() for p in line.split("=", 1))
                out[key] = value
    return out


def load_dataset(data_dir):
    """(manifest, [SegSample]) from a directory written by ``write_dataset``."""
    manifest = read_manifest(data_dir)
    radius = int(manifest.get("supervision_radius", 2))
    samples = []
    for i in range(int(manifest["count"])):
        rgb = netpbm.read_ppm(os.path.join(data_dir, "images", f"{i:04d}.ppm"))
        labels = netpbm.read_pgm(os.path.join(data_dir, "labels", f"{i:04d}.pgm"))
        samples.append(make_sample(netpbm.bytes_to_image(rgb), labels.astype(np.int64), radius))
    return manifest, samples


def split_indices(n, val_fraction=0.2):
    """Train / validation split: the last ``val_fraction`` of samples by index."""
    n_val = int(round(n * val_fraction))
    return list(range(n - n_val)), list(range(n - n_val, n))
