"""Regular stream: a small residual backbone at output stride 8."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import (ParameterStore, add_conv_norm, add_residual_block, conv_norm_relu,
                     residual_block)
from .tensor import Tensor

STEM_CHANNELS = 16
# (channels, stride, dilation) per stage
STAGES = ((16, 1, 1), (32, 2, 1), (64, 2, 1), (128, 2, 1), (128, 1, 2))
TAP_STAGES = (3, 4, 5)
OUTPUT_STRIDE = 8


@dataclass
class BackboneOutput:
    first_conv: Tensor
    taps: list
    features: Tensor


def parameter_init(seed, store=None, in_channels=3):
    """He-initialised backbone parameters, tagged ``regular``."""
    rng = np.random.default_rng([seed, 1])
    store = store if store is not None else ParameterStore()
    add_conv_norm(store, "regular.stem", in_channels, STEM_CHANNELS, 3, "regular", rng)
    cin = STEM_CHANNELS
    for i, (cout, _, _) in enumerate(STAGES, start=1):
        add_residual_block(store, f"regular.stage{i}", cin, cout, "regular", rng)
        cin = cout
    return store


def backbone_forward(image, params):
    h, w = image.shape[-2:]
    if h % OUTPUT_STRIDE or w % OUTPUT_STRIDE:
        raise ValueError(
            f"regular stream needs H and W divisible by {OUTPUT_STRIDE}, got {h}×{w}")
    first = conv_norm_relu(params, "regular.stem", image)
    x = first
    taps = []
    for i, (_, stride, dilation) in enumerate(STAGES, start=1):
        x = residual_block(params, f"regular.stage{i}", x, stride, dilation)
        if i in TAP_STAGES:
            taps.append(x)
    return BackboneOutput(first_conv=first, taps=taps, features=taps[-1])
