"""Central finite-difference checks for every differentiable op.

Each check runs in float64. The reported error is
``max|analytic - numeric| / max|numeric|`` over the checked coordinates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import ops
from . import tensor as T
from .tensor import Tensor

OP_TOLERANCE = 1e-4
GRAPH_TOLERANCE = 1e-3


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(fn, inputs, eps=1e-5, max_coords=None, rng=None):
    """Compare backward of scalar ``fn(*inputs)`` against central differences.

    ``inputs`` are float64 Tensors with requires_grad set. When ``max_coords``
    is given only that many random coordinates per input are perturbed.
    Returns the worst relative error over all inputs.
    """
    for t in inputs:
        t.grad = None
    loss = fn(*inputs)
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    rng = rng or np.random.default_rng(0)

    worst = 0.0
    for t, a in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if max_coords is None or n <= max_coords else \
            rng.choice(n, size=max_coords, replace=False)
        num = np.empty(len(idx))
        with T.no_grad():
            for k, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + eps
                up = float(fn(*inputs).data)
                flat[i] = orig - eps
                down = float(fn(*inputs).data)
                flat[i] = orig
                num[k] = (up - down) / (2 * eps)
        worst = max(worst, relative_error(a.reshape(-1)[idx], num))
    return worst


@dataclass
class GradcheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self):
        return np.isfinite(self.error) and self.error < self.tolerance


def _leaf(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)


def _weighted(out, w):
    return (out * w).sum()


def op_cases(rng):
    """(name, fn, inputs) triples for the per-op suite."""
    cases = []

    x = _leaf(rng, 2, 3, 7, 6)
    k = _leaf(rng, 4, 3, 3, 3)
    b = _leaf(rng, 4)
    w = rng.standard_normal((2, 4, 4, 3))
    cases.append(("conv2d", lambda x, k, b, w=w: _weighted(
        ops.conv2d(x, k, b, stride=2, dilation=1, padding=1), w), [x, k, b]))

    x = _leaf(rng, 3, 8, 8)
    k = _leaf(rng, 2, 3, 3, 3)
    w = rng.standard_normal((2, 4, 4))
    cases.append(("conv2d_dilated", lambda x, k, w=w: _weighted(
        ops.conv2d(x, k, None, stride=1, dilation=2, padding=0), w), [x, k]))

    x = _leaf(rng, 4, 5)
    w = rng.standard_normal((4, 5))
    cases.append(("sigmoid", lambda x, w=w: _weighted(T.sigmoid(x), w), [x]))

    x = _leaf(rng, 2, 4, 3, 3)
    w = rng.standard_normal((2, 4, 3, 3))
    cases.append(("softmax_channels", lambda x, w=w: _weighted(ops.softmax_channels(x), w), [x]))
    cases.append(("log_softmax_channels",
                  lambda x, w=w: _weighted(ops.log_softmax_channels(x), w), [x]))

    x = _leaf(rng, 2, 3, 4)
    w = rng.standard_normal((2, 7, 9))
    cases.append(("bilinear_upsample",
                  lambda x, w=w: _weighted(ops.bilinear_upsample(x, 7, 9), w), [x]))

    x = _leaf(rng, 2, 9, 8)
    w = rng.standard_normal((2, 9, 8))
    cases.append(("gaussian_blur", lambda x, w=w: _weighted(ops.gaussian_blur(x, 1.0), w), [x]))
    cases.append(("sobel_gradient_magnitude",
                  lambda x, w=w: _weighted(ops.sobel_gradient_magnitude(x), w), [x]))

    x = _leaf(rng, 2, 8, 3, 3)
    g = _leaf(rng, 8)
    bb = _leaf(rng, 8)
    w = rng.standard_normal((2, 8, 3, 3))
    cases.append(("group_norm", lambda x, g, b, w=w: _weighted(ops.group_norm(x, 4, g, b), w),
                  [x, g, bb]))

    x = Tensor(rng.uniform(0.2, 2.0, (3, 4)), requires_grad=True, dtype=np.float64)
    y = _leaf(rng, 3, 4)
    w = rng.standard_normal((3, 4))
    cases.append(("elementwise", lambda x, y, w=w: _weighted(
        T.log(x) * T.exp(y * 0.3) + T.sqrt(x) / (x + 1.0) - y ** 2, w), [x, y]))

    x = Tensor(rng.standard_normal((3, 4)) + np.sign(rng.standard_normal((3, 4))) * 0.5,
               requires_grad=True, dtype=np.float64)
    cases.append(("relu_abs", lambda x, w=w: _weighted(T.relu(x) + T.tabs(x) * 0.5, w), [x]))

    a = _leaf(rng, 2, 2, 3, 3)
    c = _leaf(rng, 2, 1, 3, 3)
    w = rng.standard_normal((2, 3, 3, 3))
    cases.append(("concat", lambda a, c, w=w: _weighted(T.concat([a, c]), w), [a, c]))

    x = _leaf(rng, 3, 5, 6)
    w = rng.standard_normal((3, 5, 6))
    w = rng.standard_normal((3, 5, 6))
    cases.append(("gumbel_straight_through",
                  lambda x, w=w: _weighted(ops.gumbel_hard_softmax(x, 1.0, soft=True), w), [x]))

    # three ops deep
    x = _leaf(rng, 2, 6, 6)
    k = _leaf(rng, 2, 2, 3, 3)
    w = rng.standard_normal((2, 6, 6))
    cases.append(("blur∘sobel∘conv", lambda x, k, w=w: _weighted(
        ops.sobel_gradient_magnitude(ops.gaussian_blur(ops.conv2d(x, k, padding=1), 1.0)), w),
        [x, k]))
    return cases


def run_suite(include_graph=True, seed=0):
    """Run every check; returns a list of GradcheckResult."""
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, inputs in op_cases(rng):
        results.append(GradcheckResult(name, check_gradients(fn, inputs), OP_TOLERANCE))
    from .shape_stream import gcl_gradcheck_case
    name, fn, inputs = gcl_gradcheck_case(rng)
    results.append(GradcheckResult(name, check_gradients(fn, inputs), OP_TOLERANCE))
    from .losses import loss_gradcheck_cases
    for name, fn, inputs in loss_gradcheck_cases(rng):
        results.append(GradcheckResult(name, check_gradients(fn, inputs), OP_TOLERANCE))
    if include_graph:
        from .model import full_graph_gradcheck
        results.append(GradcheckResult("total_loss_graph", full_graph_gradcheck(seed),
                                       GRAPH_TOLERANCE))
    return results


def main(out=print):
    t0 = time.perf_counter()
    results = run_suite()
    for r in results:
        status = "ok" if r.passed else "FAIL"
        out(f"{r.name:<28} max_rel_err={r.error:.3e}  tol={r.tolerance:.0e}  {status}")
    out(f"elapsed {time.perf_counter() - t0:.1f}s")
    return all(r.passed for r in results)
