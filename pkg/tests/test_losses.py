import math

import numpy as np
import pytest

import oracles
from gscnn import gradcheck, ops
from gscnn import losses as L
from gscnn.fusion import CategoricalMap
from gscnn.tensor import Tensor


def _t(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad, dtype=np.float64)


def _certain(labels, k, scale=60.0):
    return CategoricalMap.from_logits(_t(ops.one_hot(labels, k, np.float64) * scale))


def test_defaults():
    cfg = L.LossConfig()
    assert (cfg.bce_weight, cfg.ce_weight, cfg.reg_boundary_weight,
            cfg.reg_semantic_weight, cfg.temperature, cfg.threshold) == (20, 1, 1, 1, 1, 0.8)


@pytest.mark.parametrize("kw", [dict(threshold=1.0), dict(bce_weight=-1), dict(temperature=0),
                                dict(support="both")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        L.LossConfig(**kw)


# ------------------------------------------------------------------ BCE
def test_bce_closed_form():
    gt = np.array([[1.0, 0], [0, 0]])
    s = _t([[0.9, 0.1], [0.1, 0.1]])
    beta = 0.75
    want = -(beta * math.log(0.9) + 3 * (1 - beta) * math.log(0.9)) / 4
    assert abs(L.balanced_bce(s, gt).data - want) < 1e-12


def test_bce_perfect_prediction():
    gt = (np.random.default_rng(0).random((6, 6)) < 0.3).astype(float)
    s = _t(np.clip(gt, 1e-7, 1 - 1e-7))
    assert L.balanced_bce(s, gt).data <= 1e-5


def test_bce_all_background_weighting():
    assert L.balanced_bce(_t(np.full((4, 4), 0.5)), np.zeros((4, 4))).data == 0.0


def test_bce_empty_rejected():
    with pytest.raises(ValueError):
        L.balanced_bce(_t(np.zeros((0, 3))), np.zeros((0, 3)))


# ------------------------------------------------------------------- CE
def test_ce_uniform():
    f = CategoricalMap.from_logits(_t(np.zeros((4, 3, 3))))
    assert abs(L.cross_entropy(f, np.zeros((3, 3), int)).data - math.log(4)) < 1e-12


def test_ce_certain_is_small():
    lab = np.random.default_rng(1).integers(0, 3, (5, 5))
    assert L.cross_entropy(_certain(lab, 3), lab).data <= 1e-5


def test_ce_ignores_void_pixels():
    rng = np.random.default_rng(2)
    f = CategoricalMap.from_logits(_t(rng.standard_normal((3, 4, 4))))
    lab = rng.integers(0, 3, (4, 4))
    lab[0, 0] = 255
    a = L.cross_entropy(f, lab).data
    f.logits.data[:, 0, 0] += 5.0
    f = CategoricalMap.from_logits(f.logits)
    assert L.cross_entropy(f, lab).data == a


def test_ce_all_ignored_rejected():
    f = CategoricalMap.from_logits(_t(np.zeros((3, 2, 2))))
    with pytest.raises(ValueError, match="ignored"):
        L.cross_entropy(f, np.full((2, 2), 255))


# -------------------------------------------------------- Gumbel / argmax
def test_argmax_forward():
    out = ops.gumbel_hard_softmax(_t(np.array([3.0, 1.0, 0.0]).reshape(3, 1, 1))).data
    np.testing.assert_array_equal(out.ravel(), [1, 0, 0])


def test_ties_go_to_lowest_channel():
    out = ops.gumbel_hard_softmax(_t(np.ones((4, 2, 2)))).data
    assert np.all(out[0] == 1) and np.all(out[1:] == 0)


def test_low_temperature_soft_path():
    z = _t(np.array([3.0, 1.0, 0.0]).reshape(3, 1, 1))
    assert ops.gumbel_hard_softmax(z, tau=0.1, soft=True).data[0].item() >= 0.999


def test_straight_through_gradient_is_softmax_jacobian():
    rng = np.random.default_rng(3)
    z = _t(rng.standard_normal((4, 3, 3)), True)
    c = rng.standard_normal((4, 3, 3))
    (ops.gumbel_hard_softmax(z, tau=0.7) * c).sum().backward()
    y = oracles.softmax(z.data / 0.7)
    want = y * (c - (c * y).sum(axis=0)) / 0.7
    np.testing.assert_allclose(z.grad, want, atol=1e-12)


def test_noise_forward_is_argmax_of_perturbed_logits():
    z = _t(np.random.default_rng(4).standard_normal((5, 6, 6)))
    out = ops.gumbel_hard_softmax(z, noise=True, rng=np.random.default_rng(9)).data
    g = ops.sample_gumbel(z.shape, np.random.default_rng(9), np.float64)
    np.testing.assert_array_equal(out.argmax(0), (z.data + g).argmax(0))
    assert np.all(out.sum(0) == 1)


# ------------------------------------------------------------- potential
def test_potential_of_constant_map_is_zero():
    lab = np.zeros((8, 8), int)
    pot = L.boundary_potential(_certain(lab, 3), L.LossConfig(), noise=False)
    assert pot.data.max() < 1e-5


def test_potential_half_plane_peak():
    lab = np.zeros((16, 16), int)
    lab[:, 8:] = 1
    cfg = L.LossConfig(potential_sigma=0.3)
    pot = L.boundary_potential(_certain(lab, 2), cfg).data
    assert pot.shape == (16, 16)
    assert set(np.argmax(pot, axis=1)) <= {7, 8}
    assert abs(pot[:, 7].mean() - 1.0) < 0.05
    assert pot[:, :5].max() < 1e-3


def test_potential_range_on_random_maps():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        lab = rng.integers(0, 4, (12, 12))
        pot = L.gt_boundary_potential(lab, 4, L.LossConfig(), dtype=np.float64)
        worst = max(worst, pot.data.max())
    assert worst < 1.05


def test_reg_fwd_zero_at_gt():
    lab = np.random.default_rng(6).integers(0, 3, (2, 10, 10))
    lab[:, 0] = 255
    cfg = L.LossConfig()
    valid = lab != 255
    pot = L.boundary_potential(_certain(lab, 3), cfg, valid=valid)
    gt = L.gt_boundary_potential(lab, 3, cfg, dtype=np.float64)
    assert L.reg_loss_boundary(pot, gt, cfg.potential_eps, valid=valid).data == 0.0


def test_reg_fwd_closed_form():
    pot = np.zeros((4, 4))
    pot[1, 1] = pot[2, 3] = 0.4
    out = L.reg_loss_boundary(_t(pot), np.zeros((4, 4)), 1e-3).data
    assert abs(out - 0.4) < 1e-12
    assert L.reg_loss_boundary(_t(np.zeros((3, 3))), np.zeros((3, 3))).data == 0.0


def test_reg_fwd_matches_brute_force():
    rng = np.random.default_rng(7)
    a = rng.random((8, 8)) * (rng.random((8, 8)) < 0.5)
    b = rng.random((8, 8)) * (rng.random((8, 8)) < 0.5)
    terms = [abs(a[i, j] - b[i, j]) for i in range(8) for j in range(8)
             if a[i, j] > 1e-3 or b[i, j] > 1e-3]
    assert abs(L.reg_loss_boundary(_t(a), b, 1e-3).data - sum(terms) / len(terms)) < 1e-12


# ------------------------------------------------------------- semantic reg
def test_reg_bwd_empty_and_full_masks():
    rng = np.random.default_rng(8)
    f = CategoricalMap.from_logits(_t(rng.standard_normal((3, 4, 4))))
    lab = rng.integers(0, 3, (4, 4))
    assert L.reg_loss_semantic(_t(np.zeros((1, 4, 4))), f, lab).data == 0.0
    full = L.reg_loss_semantic(_t(np.ones((1, 4, 4))), f, lab).data
    assert abs(full - L.cross_entropy(f, lab).data) < 1e-12


def test_reg_bwd_mixed_mask_brute_force():
    rng = np.random.default_rng(9)
    logits = rng.standard_normal((3, 4, 4))
    f = CategoricalMap.from_logits(_t(logits))
    lab = rng.integers(0, 3, (4, 4))
    lab[3, 3] = 255
    s = rng.random((1, 4, 4))
    p = oracles.softmax(logits)
    terms = [-math.log(p[lab[i, j], i, j]) for i in range(4) for j in range(4)
             if s[0, i, j] > 0.8 and lab[i, j] != 255]
    want = sum(terms) / len(terms) if terms else 0.0
    assert abs(L.reg_loss_semantic(_t(s), f, lab).data - want) < 1e-12


def test_reg_bwd_ignores_unselected_pixels():
    rng = np.random.default_rng(10)
    logits = rng.standard_normal((3, 4, 4))
    lab = rng.integers(0, 3, (4, 4))
    s = np.zeros((1, 4, 4))
    s[0, :2] = 0.95
    a = L.reg_loss_semantic(_t(s), CategoricalMap.from_logits(_t(logits)), lab).data
    logits[:, 2:] = rng.standard_normal((3, 2, 4)) * 10
    b = L.reg_loss_semantic(_t(s), CategoricalMap.from_logits(_t(logits)), lab).data
    assert a == b


def test_reg_bwd_passes_no_gradient_to_s():
    rng = np.random.default_rng(11)
    s = _t(rng.random((1, 4, 4)), True)
    f = CategoricalMap.from_logits(_t(rng.standard_normal((3, 4, 4)), True))
    (L.reg_loss_semantic(s, f, rng.integers(0, 3, (4, 4)), threshold=0.3) + s.sum() * 0).backward()
    assert np.all(s.grad == 0)


# ------------------------------------------------------------------ total
def _instance(seed, k=3, h=10):
    rng = np.random.default_rng(seed)
    lab = rng.integers(0, k, (1, h, h))
    s = _t(rng.random((1, 1, h, h)))
    f = CategoricalMap.from_logits(_t(rng.standard_normal((1, k, h, h))))
    gt_b = (rng.random((1, 1, h, h)) < 0.3).astype(float)
    return s, f, lab, gt_b


def test_total_is_weighted_sum():
    cfg = L.LossConfig(bce_weight=3.0, ce_weight=0.5, reg_boundary_weight=2.0,
                       reg_semantic_weight=1.5)
    s, f, lab, gt_b = _instance(0)
    out = L.total_loss(s, f, lab, gt_b, cfg)
    v = out.values()
    want = 3.0 * v["bce"] + 0.5 * v["ce"] + 2.0 * v["reg_fwd"] + 1.5 * v["reg_bwd"]
    assert abs(v["total"] - want) <= 1e-9 * max(1.0, abs(want))
    assert all(np.isfinite(x) and x >= 0 for x in v.values())


def test_components_match_independent_calls():
    cfg = L.LossConfig(gumbel_noise=False)
    s, f, lab, gt_b = _instance(1)
    out = L.total_loss(s, f, lab, gt_b, cfg)
    assert out.bce.data == L.balanced_bce(s, gt_b).data
    assert out.ce.data == L.cross_entropy(f, lab).data
    assert out.reg_bwd.data == L.reg_loss_semantic(s, f, lab, threshold=cfg.threshold).data


def test_dual_task_off_reduces_to_two_terms():
    cfg = L.LossConfig(reg_boundary_weight=0, reg_semantic_weight=0)
    s, f, lab, gt_b = _instance(2)
    v = L.total_loss(s, f, lab, gt_b, cfg).values()
    assert v["total"] == np.float64(20 * v["bce"] + v["ce"])


def test_total_small_at_ground_truth():
    lab = np.random.default_rng(3).integers(0, 3, (1, 12, 12))
    from gscnn.metrics import gt_boundary_from_mask
    gt_b = gt_boundary_from_mask(lab[0], 2)[None, None].astype(float)
    s = _t(np.clip(gt_b, 1e-7, 1 - 1e-7))
    out = L.total_loss(s, _certain(lab, 3), lab, gt_b, L.LossConfig())
    assert out.total.data <= 1e-4


def test_total_without_shape_stream():
    _, f, lab, gt_b = _instance(4)
    v = L.total_loss(None, f, lab, gt_b, L.LossConfig()).values()
    assert v["bce"] == 0 and v["reg_bwd"] == 0


@pytest.mark.parametrize("idx", range(5))
def test_loss_gradchecks(idx):
    name, fn, inputs = L.loss_gradcheck_cases(np.random.default_rng(0))[idx]
    assert gradcheck.check_gradients(fn, inputs) < gradcheck.OP_TOLERANCE, name
