"""Shape stream: full-resolution residual blocks interleaved with gated
convolutional layers, ending in a sigmoid boundary map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from . import tensor as T
from .params import (ParameterStore, add_conv, add_norm, add_residual_block, conv, norm,
                     residual_block)
from .regular_stream import STAGES, STEM_CHANNELS, TAP_STAGES
from .tensor import Tensor

SHAPE_CHANNELS = 16
NUM_GATES = 3


@dataclass
class GclTap:
    s: Tensor
    r: Tensor
    index: int = 1

    def __post_init__(self):
        if self.s.shape[-2:] != self.r.shape[-2:]:
            raise ValueError(
                f"GCL tap {self.index}: shape feature {self.s.shape[-2:]} and regular feature "
                f"{self.r.shape[-2:]} differ spatially; upsample r first")


def attention_map(tap, params, name, normalize=True):
    """sigmoid(conv1x1(norm(s || r))) -> one channel in (0, 1)."""
    x = T.concat([tap.s, tap.r])
    if normalize:
        x = norm(params, f"{name}.norm", x)
    return T.sigmoid(conv(params, f"{name}.att", x))


def gated_conv(s, alpha, weight):
    """((s * alpha) + s) mixed across channels by the 1×1 kernel ``weight``."""
    if alpha.shape[-3] != 1 or alpha.shape[-2:] != s.shape[-2:]:
        raise ValueError(f"gated_conv: alpha {alpha.shape} does not match feature {s.shape}")
    if weight.shape[:2] != (s.shape[-3], s.shape[-3]) or weight.shape[2:] != (1, 1):
        raise ValueError(f"gated_conv: kernel {weight.shape} is not {s.shape[-3]}→{s.shape[-3]} 1×1")
    return ops.conv2d(s * alpha + s, weight)


def tap_channels():
    return [STAGES[i - 1][0] for i in TAP_STAGES]


def parameter_init(seed, store=None, first_channels=STEM_CHANNELS, taps=None):
    rng = np.random.default_rng([seed, 2])
    store = store if store is not None else ParameterStore()
    taps = taps or tap_channels()
    c = SHAPE_CHANNELS
    add_conv(store, "shape.entry", first_channels, c, 1, "shape", rng)
    for t, cr in enumerate(taps, start=1):
        add_residual_block(store, f"shape.res{t}", c, c, "shape", rng)
        add_norm(store, f"shape.gate{t}.norm", c + cr, "shape")
        add_conv(store, f"shape.gate{t}.att", c + cr, 1, 1, "shape", rng)
        add_conv(store, f"shape.gate{t}.mix", c, c, 1, "shape", rng, bias=False)
    add_conv(store, "shape.reduce", c, 1, 1, "shape", rng)
    add_conv(store, "shape.out", 2, 1, 1, "shape", rng)
    return store


def shape_stream_forward(first_conv, taps, image_grad, params, return_gates=False):
    """Boundary map s (N,1,H,W) in (0, 1) from stem features, taps and the image-gradient input."""
    h, w = first_conv.shape[-2:]
    if len(taps) != NUM_GATES:
        raise ValueError(f"shape stream needs {NUM_GATES} regular-stream taps, got {len(taps)}")
    if image_grad.shape[-3] != 1 or image_grad.shape[-2:] != (h, w):
        raise ValueError(
            f"shape stream: image gradient {image_grad.shape} does not match {h}×{w}")
    s = conv(params, "shape.entry", first_conv)
    gates = []
    for t, r in enumerate(taps, start=1):
        s = residual_block(params, f"shape.res{t}", s)
        r_up = ops.bilinear_upsample(r, h, w)
        alpha = attention_map(GclTap(s, r_up, t), params, f"shape.gate{t}")
        gates.append(alpha)
        s = gated_conv(s, alpha, params[f"shape.gate{t}.mix.weight"])
    s = conv(params, "shape.reduce", s)
    s = T.concat([s, image_grad])
    s = T.sigmoid(conv(params, "shape.out", s))
    if s.shape[-2:] != (h, w):
        raise AssertionError("shape stream changed spatial extent")
    return (s, gates) if return_gates else s


def gcl_gradcheck_case(rng):
    """attention_map ∘ gated_conv in float64, for the gradient suite."""
    cs, cr, hw = 4, 3, 5

    def leaf(*shape, scale=1.0):
        return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)

    s, r = leaf(2, cs, hw, hw), leaf(2, cr, hw, hw)
    scale, shift = leaf(cs + cr, scale=0.3), leaf(cs + cr, scale=0.3)
    att_w, att_b = leaf(1, cs + cr, 1, 1, scale=0.5), leaf(1)
    mix = leaf(cs, cs, 1, 1, scale=0.5)
    weights = rng.standard_normal((2, cs, hw, hw))

    def fn(s, r, scale, shift, att_w, att_b, mix):
        params = {"g.norm.scale": scale + 1.0, "g.norm.shift": shift,
                  "g.att.weight": att_w, "g.att.bias": att_b}
        alpha = attention_map(GclTap(s, r), params, "g")
        return (gated_conv(s, alpha, mix) * weights).sum()

    return "gcl(attention∘gated_conv)", fn, [s, r, scale, shift, att_w, att_b, mix]
