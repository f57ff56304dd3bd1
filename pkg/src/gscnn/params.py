"""Named parameter storage, initialisation and the layer helpers built on it."""

from __future__ import annotations

import numpy as np

from . import ops
from . import tensor as T
from .tensor import Tensor

STREAM_TAGS = ("regular", "shape", "fusion")
NORM_GROUPS = 8


class ParameterStore:
    """Name -> trainable Tensor map; every parameter carries one stream tag."""

    def __init__(self):
        self._params = {}
        self._tags = {}

    def add(self, name, value, tag):
        if tag not in STREAM_TAGS:
            raise ValueError(f"unknown stream tag {tag!r}; expected one of {STREAM_TAGS}")
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value, dtype=np.float32)
        t.requires_grad = True
        t.name = name
        self._params[name] = t
        self._tags[name] = tag
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self, tag=None):
        return [n for n in self._params if tag is None or self._tags[n] == tag]

    def tag_of(self, name):
        return self._tags[name]

    def count(self, tag=None):
        return sum(self._params[n].data.size for n in self.names(tag))

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def astype(self, dtype):
        out = ParameterStore()
        for n, t in self._params.items():
            out.add(n, Tensor(t.data.copy(), dtype=dtype), self._tags[n])
        return out

    def state_dict(self):
        return {n: t.data for n, t in self._params.items()}

    def load_state_dict(self, state, strict=True):
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if strict and (missing or extra):
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for n, arr in state.items():
            if n in self._params:
                cur = self._params[n]
                if cur.shape != tuple(arr.shape):
                    raise ValueError(f"{n}: shape {arr.shape} != {cur.shape}")
                cur.data = np.array(arr, dtype=cur.dtype)


# ------------------------------------------------------------------ init
def he_normal(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def add_conv(store, name, cin, cout, k, tag, rng, bias=True):
    store.add(f"{name}.weight", he_normal(rng, (cout, cin, k, k)), tag)
    if bias:
        store.add(f"{name}.bias", np.zeros(cout, np.float32), tag)


def add_norm(store, name, channels, tag):
    store.add(f"{name}.scale", np.ones(channels, np.float32), tag)
    store.add(f"{name}.shift", np.zeros(channels, np.float32), tag)


# --------------------------------------------------------------- forward helpers
def conv(params, name, x, stride=1, dilation=1, padding=None):
    w = params[f"{name}.weight"]
    b = params[f"{name}.bias"] if f"{name}.bias" in params else None
    if padding is None:
        padding = dilation * (w.shape[-1] - 1) // 2
    return ops.conv2d(x, w, b, stride=stride, dilation=dilation, padding=padding)


def norm(params, name, x, groups=NORM_GROUPS):
    c = x.shape[-3]
    return ops.group_norm(x, min(groups, c), params[f"{name}.scale"], params[f"{name}.shift"])


def conv_norm_relu(params, name, x, stride=1, dilation=1):
    return T.relu(norm(params, f"{name}.norm", conv(params, f"{name}.conv", x, stride, dilation)))


def add_conv_norm(store, name, cin, cout, k, tag, rng):
    add_conv(store, f"{name}.conv", cin, cout, k, tag, rng, bias=False)
    add_norm(store, f"{name}.norm", cout, tag)


def add_residual_block(store, name, cin, cout, tag, rng):
    """Two 3×3 conv+norm layers with identity or 1×1 projection shortcut."""
    add_conv_norm(store, f"{name}.a", cin, cout, 3, tag, rng)
    add_conv_norm(store, f"{name}.b", cout, cout, 3, tag, rng)
    if cin != cout:
        add_conv_norm(store, f"{name}.proj", cin, cout, 1, tag, rng)


def residual_block(params, name, x, stride=1, dilation=1):
    h = conv_norm_relu(params, f"{name}.a", x, stride, dilation)
    h = norm(params, f"{name}.b.norm", conv(params, f"{name}.b.conv", h, 1, dilation))
    if f"{name}.proj.conv.weight" in params:
        short = norm(params, f"{name}.proj.norm",
                     conv(params, f"{name}.proj.conv", x, stride=stride, padding=0))
    elif stride != 1:
        raise ValueError(f"{name}: strided block needs a projection shortcut")
    else:
        short = x
    return T.relu(h + short)
