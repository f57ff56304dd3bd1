"""Two-stream network assembly with the ablation switches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fusion, regular_stream, shape_stream
from .losses import LossConfig, total_loss
from .params import ParameterStore
from .tensor import Tensor


@dataclass
class ModelConfig:
    num_classes: int = 5
    shape_stream: bool = True
    gradients_input: bool = False

    def __post_init__(self):
        if not self.shape_stream:
            # baseline: no boundary map to feed, no extra gradient channel
            self.gradients_input = False


@dataclass
class ModelOutput:
    categorical: fusion.CategoricalMap
    boundary: Tensor | None
    backbone: regular_stream.BackboneOutput


def init_params(cfg, seed):
    store = ParameterStore()
    regular_stream.parameter_init(seed, store)
    if cfg.shape_stream:
        shape_stream.parameter_init(seed, store)
    fusion.parameter_init(seed, cfg.num_classes,
                          feature_channels=regular_stream.STAGES[-1][0],
                          use_boundary=cfg.shape_stream,
                          use_extra_grad=cfg.gradients_input, store=store)
    return store


def forward(params, cfg, image, image_grad=None):
    if image.shape[-3] != 3:
        raise ValueError(f"expected a 3-channel image, got shape {image.shape}")
    bb = regular_stream.backbone_forward(image, params)
    boundary = None
    if cfg.shape_stream:
        if image_grad is None:
            raise ValueError("the shape stream needs the image gradient map")
        boundary = shape_stream.shape_stream_forward(bb.first_conv, bb.taps, image_grad, params)
    extra = image_grad if cfg.gradients_input else None
    cat = fusion.aspp_fuse(bb.features, boundary, extra, cfg.num_classes, params,
                           image_size=image.shape[-2:])
    return ModelOutput(categorical=cat, boundary=boundary, backbone=bb)


def full_graph_gradcheck(seed=0, coords_per_param=2, eps=1e-5):
    """Finite-difference check of total_loss through every parameter (float64,
    16×16, K=3). The straight-through argmax is replaced by its softmax
    surrogate so the forward is differentiable everywhere."""
    from .gradcheck import check_gradients

    rng = np.random.default_rng([seed, 99])
    cfg = ModelConfig(num_classes=3, shape_stream=True, gradients_input=True)
    params = init_params(cfg, seed).astype(np.float64)
    # non-trivial norm affines so no parameter sits at a symmetric point
    for name, t in params.items():
        if name.endswith(".scale") or name.endswith(".shift"):
            t.data += rng.normal(0, 0.1, t.shape)
    image = Tensor(rng.random((1, 3, 16, 16)), dtype=np.float64)
    grad_map = Tensor((rng.random((1, 1, 16, 16)) < 0.2).astype(np.float64), dtype=np.float64)
    labels = np.zeros((1, 16, 16), np.int64)
    labels[:, :, 6:] = 1
    labels[:, 9:, 3:12] = 2
    labels[:, 0, :] = 255
    from .metrics import gt_boundary_from_mask
    gt_b = gt_boundary_from_mask(labels[0], 2, 255)[None, None].astype(np.float64)
    loss_cfg = LossConfig(gumbel_noise=False, threshold=0.5)

    names = list(params)
    leaves = [params[n] for n in names]

    def fn(*tensors):
        out = forward(params, cfg, image, grad_map)
        return total_loss(out.boundary, out.categorical, labels, gt_b, loss_cfg,
                          soft=True).total

    return check_gradients(fn, leaves, eps=eps, max_coords=coords_per_param,
                           rng=np.random.default_rng([seed, 7]))
