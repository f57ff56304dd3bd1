"""Network ops on (N,)C,H,W tensors: convolution, normalization, softmax,
resampling and the fixed Gaussian / Sobel filters.

All ops accept a channel-first image tensor with an optional leading batch
axis and keep the input dtype.
"""

from __future__ import annotations

import functools
import math

import numpy as np

from .tensor import Tensor, as_tensor, make_op

SOBEL_EPS = 1e-12


def _batched(x):
    """View ``x.data`` as 4-D; return (array, squeeze_flag)."""
    if x.ndim == 4:
        return x.data, False
    if x.ndim == 3:
        return x.data[None], True
    raise ValueError(f"expected C×H×W or N×C×H×W tensor, got shape {x.shape}")


# ----------------------------------------------------------------- convolution
def conv_output_size(n, k, stride, dilation, padding):
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(x, weight, bias=None, stride=1, dilation=1, padding=0):
    """2-D cross-correlation with zero padding (im2col + matmul)."""
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride={stride} dilation={dilation} padding={padding}")
    X, squeeze = _batched(x)
    N, C, H, W = X.shape
    if weight.ndim != 4:
        raise ValueError(f"conv2d: kernel must be C_out×C_in×k×k, got {weight.shape}")
    Co, Ci, kh, kw = weight.shape
    if Ci != C:
        raise ValueError(f"conv2d: input has {C} channels, kernel expects {Ci}")
    if bias is not None and bias.shape != (Co,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({Co},)")
    Ho = conv_output_size(H, kh, stride, dilation, padding)
    Wo = conv_output_size(W, kw, stride, dilation, padding)
    if Ho <= 0 or Wo <= 0:
        raise ValueError(
            f"conv2d: empty output {Ho}×{Wo} for input {H}×{W}, k={kh}×{kw}, "
            f"dilation={dilation}, padding={padding}")

    dt = X.dtype
    Hp, Wp = H + 2 * padding, W + 2 * padding
    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    # stride-1 kernels: multiply the padded input once, then shift-add per tap
    shifted = (not pointwise and stride == 1
               and Co * Hp * Wp <= 4 * C * Ho * Wo)
    if shifted:
        return _conv2d_shifted(x, weight, bias, dilation, padding, squeeze)

    Wm = weight.data.reshape(Co, Ci * kh * kw).astype(dt, copy=False)
    if pointwise:
        cols = X.reshape(N, C, H * W)
    else:
        Xp = _pad(X, padding)
        cols = np.empty((N, C, kh, kw, Ho, Wo), dtype=dt)
        hs, ws = stride * (Ho - 1) + 1, stride * (Wo - 1) + 1
        for i in range(kh):
            for j in range(kw):
                cols[:, :, i, j] = Xp[:, :, i * dilation:i * dilation + hs:stride,
                                      j * dilation:j * dilation + ws:stride]
        cols = cols.reshape(N, C * kh * kw, Ho * Wo)

    out = np.matmul(Wm, cols).reshape(N, Co, Ho, Wo)
    if bias is not None:
        out += bias.data.astype(dt, copy=False)[:, None, None]
    if squeeze:
        out = out[0]

    def backward(g):
        G = g.reshape(N, Co, Ho * Wo)
        gw = gb = gx = None
        if weight.requires_grad:
            gw = np.matmul(G, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = G.sum(axis=(0, 2))
        if x.requires_grad:
            dcols = np.matmul(Wm.T, G)
            if pointwise:
                gx = dcols.reshape(N, C, H, W)
            else:
                dcols = dcols.reshape(N, C, kh, kw, Ho, Wo)
                gxp = np.zeros((N, C, Hp, Wp), dtype=dt)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i * dilation:i * dilation + hs:stride,
                            j * dilation:j * dilation + ws:stride] += dcols[:, :, i, j]
                gx = gxp[:, :, padding:padding + H, padding:padding + W]
            if squeeze:
                gx = gx[0]
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, backward)


def _pad(X, padding):
    if not padding:
        return X
    N, C, H, W = X.shape
    Xp = np.zeros((N, C, H + 2 * padding, W + 2 * padding), dtype=X.dtype)
    Xp[:, :, padding:padding + H, padding:padding + W] = X
    return Xp


def _conv2d_shifted(x, weight, bias, dilation, padding, squeeze):
    """Stride-1 conv as Y = W_taps @ X_pad followed by per-tap shifted sums.

    Avoids the im2col buffer; both gradients come from one scattered copy of g.
    """
    X = x.data[None] if squeeze else x.data
    N, C, H, W = X.shape
    Co, _, kh, kw = weight.shape
    dt = X.dtype
    Hp, Wp = H + 2 * padding, W + 2 * padding
    Ho, Wo = Hp - dilation * (kh - 1), Wp - dilation * (kw - 1)
    taps = [(i * dilation, j * dilation) for i in range(kh) for j in range(kw)]
    Wa = weight.data.astype(dt, copy=False).transpose(2, 3, 0, 1).reshape(kh * kw * Co, C)
    Xp = _pad(X, padding).reshape(N, C, Hp * Wp)
    Y = np.matmul(Wa, Xp).reshape(N, kh * kw, Co, Hp, Wp)
    out = np.zeros((N, Co, Ho, Wo), dtype=dt)
    for t, (a, b) in enumerate(taps):
        out += Y[:, t, :, a:a + Ho, b:b + Wo]
    del Y
    if bias is not None:
        out += bias.data.astype(dt, copy=False)[:, None, None]
    if squeeze:
        out = out[0]

    def backward(g):
        G = g[None] if squeeze else g
        dY = np.zeros((N, kh * kw, Co, Hp, Wp), dtype=dt)
        for t, (a, b) in enumerate(taps):
            dY[:, t, :, a:a + Ho, b:b + Wo] = G
        dY = dY.reshape(N, kh * kw * Co, Hp * Wp)
        gw = gb = gx = None
        if weight.requires_grad:
            gwa = np.matmul(dY, Xp.transpose(0, 2, 1)).sum(axis=0)
            gw = gwa.reshape(kh, kw, Co, C).transpose(2, 3, 0, 1)
        if bias is not None and bias.requires_grad:
            gb = G.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gxp = np.matmul(Wa.T, dY).reshape(N, C, Hp, Wp)
            gx = gxp[:, :, padding:padding + H, padding:padding + W]
            if squeeze:
                gx = gx[0]
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, backward)


# --------------------------------------------------------------- normalization
def group_norm(x, groups, weight=None, bias=None, eps=1e-5):
    X, squeeze = _batched(x)
    N, C, H, W = X.shape
    if C % groups:
        raise ValueError(f"group_norm: {C} channels not divisible into {groups} groups")
    Xg = X.reshape(N, groups, -1)
    mu = Xg.mean(axis=-1, keepdims=True)
    xc = Xg - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(N, C, H, W)
    out = xhat
    if weight is not None:
        out = out * weight.data.astype(X.dtype, copy=False)[:, None, None]
    if bias is not None:
        out = out + bias.data.astype(X.dtype, copy=False)[:, None, None]
    if squeeze:
        out = out[0]

    def backward(g):
        G = g[None] if squeeze else g
        gw = gb = gx = None
        if weight is not None and weight.requires_grad:
            gw = (G * xhat).sum(axis=(0, 2, 3))
        if bias is not None and bias.requires_grad:
            gb = G.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gxh = G * weight.data[:, None, None] if weight is not None else G
            gxh = gxh.reshape(N, groups, -1)
            xh = xhat.reshape(N, groups, -1)
            gx = inv * (gxh - gxh.mean(axis=-1, keepdims=True)
                        - xh * (gxh * xh).mean(axis=-1, keepdims=True))
            gx = gx.reshape(N, C, H, W)
            if squeeze:
                gx = gx[0]
        return gx, gw, gb

    parents = [x]
    if weight is not None:
        parents.append(weight)
    if bias is not None:
        parents.append(bias)

    def backward_packed(g):
        gx, gw, gb = backward(g)
        res = [gx]
        if weight is not None:
            res.append(gw)
        if bias is not None:
            res.append(gb)
        return res

    return make_op(out, parents, backward_packed)


# --------------------------------------------------------------------- softmax
def softmax_channels(t):
    """Per-pixel softmax over the channel axis (-3)."""
    X = t.data
    e = np.exp(X - X.max(axis=-3, keepdims=True))
    out = e / e.sum(axis=-3, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-3, keepdims=True)),)

    return make_op(out, (t,), backward)


def log_softmax_channels(t):
    X = t.data
    shifted = X - X.max(axis=-3, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-3, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=-3, keepdims=True),)

    return make_op(out, (t,), backward)


def global_avg_pool(t):
    return t.mean(axis=(-2, -1), keepdims=True)


# ------------------------------------------------------------ separable linear
def _separable(t, mh, mw):
    """out = mh @ t @ mw.T over the last two axes (fixed matrices)."""
    mh = mh.astype(t.dtype, copy=False)
    mw = mw.astype(t.dtype, copy=False)
    out = np.matmul(np.matmul(mh, t.data), mw.T)

    def backward(g):
        return (np.matmul(np.matmul(mh.T, g), mw),)

    return make_op(out, (t,), backward)


def _reflect(j, n):
    """Half-sample symmetric index (… c b a | a b c … c | c b …)."""
    j = np.mod(j, 2 * n)
    return np.where(j >= n, 2 * n - 1 - j, j)


def _filter_matrix(n, taps):
    """n×n matrix applying the centred 1-D correlation ``taps`` with reflect padding."""
    r = len(taps) // 2
    m = np.zeros((n, n), dtype=np.float64)
    rows = np.arange(n)
    for k, w in enumerate(taps):
        if w:
            np.add.at(m, (rows, _reflect(rows + k - r, n)), w)
    return m


@functools.lru_cache(maxsize=64)
def interp_matrix(n_in, n_out):
    """Linear interpolation matrix, half-pixel centres (align_corners=False)."""
    scale = n_in / n_out
    src = np.maximum((np.arange(n_out) + 0.5) * scale - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - lam)
    np.add.at(m, (rows, i1), lam)
    m.flags.writeable = False
    return m


def bilinear_upsample(t, target_h, target_w):
    """Bilinear resize of the last two axes to target_h×target_w.

    Written for upsampling; shrinking works too and samples (does not
    average) the source, which is what the fusion module relies on.
    """
    if target_h <= 0 or target_w <= 0:
        raise ValueError(f"bilinear_upsample: non-positive target {target_h}×{target_w}")
    h, w = t.shape[-2:]
    if (h, w) == (target_h, target_w):
        return _separable(t, np.eye(h), np.eye(w))
    return _separable(t, interp_matrix(h, target_h), interp_matrix(w, target_w))


def gaussian_kernel1d(sigma):
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


@functools.lru_cache(maxsize=64)
def gaussian_matrix(n, sigma):
    m = _filter_matrix(n, gaussian_kernel1d(sigma))
    m.flags.writeable = False
    return m


def gaussian_blur(t, sigma):
    """Separable Gaussian blur with reflect padding, radius ceil(3·sigma)."""
    if not sigma > 0:
        raise ValueError(f"gaussian_blur: sigma must be > 0, got {sigma}")
    h, w = t.shape[-2:]
    return _separable(t, gaussian_matrix(h, float(sigma)), gaussian_matrix(w, float(sigma)))


# Sobel = outer(smooth, diff); 1/4 makes a unit step read 1 on both sides.
_SOBEL_SMOOTH = (0.25, 0.5, 0.25)
_SOBEL_DIFF = (-1.0, 0.0, 1.0)


@functools.lru_cache(maxsize=64)
def _sobel_matrices(n):
    s = _filter_matrix(n, _SOBEL_SMOOTH)
    d = _filter_matrix(n, _SOBEL_DIFF)
    s.flags.writeable = False
    d.flags.writeable = False
    return s, d


def sobel_kernels():
    """The dense 3×3 (x, y) kernels equivalent to ``sobel_gradient_magnitude``."""
    kx = np.outer(_SOBEL_SMOOTH, _SOBEL_DIFF)
    return kx, kx.T.copy()


def sobel_gradient_magnitude(t, eps=SOBEL_EPS):
    """Per-channel sqrt(Gx² + Gy² + eps) with reflect padding."""
    h, w = t.shape[-2:]
    if h < 3 or w < 3:
        raise ValueError(f"sobel_gradient_magnitude: spatial extent {h}×{w} smaller than 3×3")
    dt = t.dtype
    sh, dh = (m.astype(dt, copy=False) for m in _sobel_matrices(h))
    sw, dw = (m.astype(dt, copy=False) for m in _sobel_matrices(w))
    X = t.data
    gx = np.matmul(np.matmul(sh, X), dw.T)
    gy = np.matmul(np.matmul(dh, X), sw.T)
    mag = np.sqrt(gx * gx + gy * gy + eps)

    def backward(g):
        ggx = g * gx / mag
        ggy = g * gy / mag
        return (np.matmul(np.matmul(sh.T, ggx), dw) + np.matmul(np.matmul(dh.T, ggy), sw),)

    return make_op(mag, (t,), backward)


# ------------------------------------------------------------------- one-hots
def one_hot(labels, num_classes, dtype=np.float32):
    """(N,)H,W int labels -> (N,)K,H,W one-hot; labels outside [0, K) map to all-zero."""
    labels = np.asarray(labels)
    k = np.arange(num_classes).reshape(-1, 1, 1)
    return (np.expand_dims(labels, -3) == k).astype(dtype)


def sample_gumbel(shape, rng, dtype=np.float64):
    u = rng.random(shape)
    u = np.clip(u, np.finfo(np.float64).tiny, 1.0 - 1e-12)
    return (-np.log(-np.log(u))).astype(dtype)


def gumbel_hard_softmax(logits, tau=1.0, noise=False, rng=None, soft=False):
    """Straight-through argmax over channels.

    Forward returns the exact one-hot argmax of ``logits`` (ties go to the
    lowest channel). Backward returns the gradient of
    softmax((logits + g) / tau), with g ~ Gumbel(0, 1) when ``noise`` is on.
    ``soft=True`` returns that softmax as the forward value instead; the
    gradient checks use it as the smooth surrogate.
    """
    if not tau > 0:
        raise ValueError(f"gumbel_hard_softmax: tau must be > 0, got {tau}")
    X = logits.data
    z = X
    if noise:
        if rng is None:
            rng = np.random.default_rng(0)
        z = X + sample_gumbel(X.shape, rng, X.dtype)
    perturbed = z
    z = z / tau
    e = np.exp(z - z.max(axis=-3, keepdims=True))
    y = e / e.sum(axis=-3, keepdims=True)
    if soft:
        out = y
    else:
        idx = perturbed.argmax(axis=-3)
        out = (np.expand_dims(idx, -3) == np.arange(X.shape[-3]).reshape(-1, 1, 1)).astype(X.dtype)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-3, keepdims=True)) / tau,)

    return make_op(out, (logits,), backward)


__all__ = [
    "Tensor", "as_tensor", "conv2d", "group_norm", "softmax_channels",
    "log_softmax_channels", "global_avg_pool", "bilinear_upsample", "gaussian_blur",
    "sobel_gradient_magnitude", "one_hot", "gumbel_hard_softmax",
]
