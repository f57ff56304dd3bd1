"""Fusion module: ASPP over regular-stream features and the boundary map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from . import tensor as T
from .params import ParameterStore, add_conv, add_conv_norm, conv, conv_norm_relu, norm
from .tensor import Tensor

ASPP_CHANNELS = 64
ASPP_DILATIONS = (2, 4, 8)


@dataclass
class CategoricalMap:
    logits: Tensor
    probs: Tensor

    @classmethod
    def from_logits(cls, logits):
        return cls(logits=logits, probs=ops.softmax_channels(logits))

    @property
    def num_classes(self):
        return self.logits.shape[-3]

    def labels(self):
        return self.probs.data.argmax(axis=-3)


def parameter_init(seed, num_classes, feature_channels=128, use_boundary=True,
                   use_extra_grad=False, store=None):
    if num_classes < 2:
        raise ValueError(f"fusion needs at least 2 classes, got {num_classes}")
    rng = np.random.default_rng([seed, 3])
    store = store if store is not None else ParameterStore()
    c = ASPP_CHANNELS
    cin = feature_channels + int(use_boundary) + int(use_extra_grad)
    add_conv_norm(store, "fusion.aspp.b0", cin, c, 1, "fusion", rng)
    for i, _ in enumerate(ASPP_DILATIONS, start=1):
        add_conv_norm(store, f"fusion.aspp.b{i}", cin, c, 3, "fusion", rng)
    add_conv_norm(store, "fusion.aspp.pool", cin, c, 1, "fusion", rng)
    add_conv_norm(store, "fusion.project", c * (len(ASPP_DILATIONS) + 2), c, 1, "fusion", rng)
    add_conv(store, "fusion.logits", c, num_classes, 1, "fusion", rng)
    add_conv(store, "fusion.refine", c + int(use_boundary), num_classes, 3, "fusion", rng)
    return store


def aspp_fuse(features, boundary, extra_grad, num_classes, params, image_size=None):
    """Merge stride-8 features with the boundary map; returns a CategoricalMap.

    ``boundary`` may be None (no shape stream); ``image_size`` is then
    required to know the output resolution.
    """
    if num_classes < 2:
        raise ValueError(f"fusion needs at least 2 classes, got {num_classes}")
    if boundary is not None:
        size = tuple(boundary.shape[-2:])
        if image_size is not None and tuple(image_size) != size:
            raise ValueError(f"boundary map {size} does not match image size {tuple(image_size)}")
    elif image_size is None:
        raise ValueError("aspp_fuse needs the image size when no boundary map is given")
    else:
        size = tuple(image_size)
    h, w = size
    fh, fw = features.shape[-2:]

    parts = [features]
    for name, extra in (("boundary", boundary), ("image gradient", extra_grad)):
        if extra is None:
            continue
        if extra.shape[-3] != 1 or tuple(extra.shape[-2:]) != size:
            raise ValueError(f"fusion: {name} map {extra.shape} is not 1×{h}×{w}")
        parts.append(ops.bilinear_upsample(extra, fh, fw))
    x = T.concat(parts) if len(parts) > 1 else features
    expected = params["fusion.aspp.b0.conv.weight"].shape[1]
    if x.shape[-3] != expected:
        raise ValueError(f"fusion: {x.shape[-3]} input channels, parameters expect {expected}")

    branches = [conv_norm_relu(params, "fusion.aspp.b0", x)]
    for i, d in enumerate(ASPP_DILATIONS, start=1):
        branches.append(conv_norm_relu(params, f"fusion.aspp.b{i}", x, dilation=d))
    pooled = conv_norm_relu(params, "fusion.aspp.pool", ops.global_avg_pool(x))
    branches.append(T.broadcast_to(pooled, branches[0].shape))
    hidden = conv_norm_relu(params, "fusion.project", T.concat(branches))

    coarse = ops.bilinear_upsample(conv(params, "fusion.logits", hidden), h, w)
    fine_in = [ops.bilinear_upsample(hidden, h, w)]
    if boundary is not None:
        fine_in.append(boundary)
    fine = conv(params, "fusion.refine", T.concat(fine_in) if len(fine_in) > 1 else fine_in[0])
    logits = coarse + fine
    if logits.shape[-3] != num_classes:
        raise ValueError(f"fusion produced {logits.shape[-3]} classes, expected {num_classes}")
    return CategoricalMap.from_logits(logits)
