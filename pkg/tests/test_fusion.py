import numpy as np
import pytest

from gscnn import fusion, model
from gscnn.losses import cross_entropy
from gscnn.tensor import Tensor


def _features(h, w, seed=0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal((1, 128, h // 8, w // 8)))


@pytest.mark.parametrize("hw", [(64, 64), (96, 64)])
def test_probs_normalised_at_full_resolution(hw):
    h, w = hw
    store = fusion.parameter_init(0, 5)
    s = Tensor(np.random.default_rng(1).random((1, 1, h, w)))
    out = fusion.aspp_fuse(_features(h, w), s, None, 5, store)
    assert out.probs.shape == (1, 5, h, w)
    np.testing.assert_allclose(out.probs.data.sum(axis=1), 1.0, atol=1e-5)


def test_boundary_input_is_consumed():
    store = fusion.parameter_init(0, 4)
    feats = _features(32, 32)
    s = Tensor(np.random.default_rng(2).random((1, 1, 32, 32)), requires_grad=True)
    out = fusion.aspp_fuse(feats, s, None, 4, store)
    labels = np.random.default_rng(3).integers(0, 4, (1, 32, 32))
    cross_entropy(out, labels).backward()
    assert np.abs(s.grad).sum() > 0
    zero = fusion.aspp_fuse(feats, Tensor(np.zeros((1, 1, 32, 32))), None, 4, store)
    assert np.abs(zero.logits.data - out.logits.data).max() > 1e-6


def test_every_branch_is_live():
    store = fusion.parameter_init(0, 3)
    out = fusion.aspp_fuse(_features(32, 32), Tensor(np.random.rand(1, 1, 32, 32)), None, 3,
                           store)
    labels = np.random.default_rng(5).integers(0, 3, (1, 32, 32))
    cross_entropy(out, labels).backward()
    for name in store.names():
        if name.startswith("fusion.aspp"):
            assert np.abs(store[name].grad).sum() > 0, name


def test_extra_gradient_channel():
    store = fusion.parameter_init(0, 3, use_extra_grad=True)
    g = Tensor(np.random.rand(1, 1, 32, 32))
    out = fusion.aspp_fuse(_features(32, 32), Tensor(np.random.rand(1, 1, 32, 32)), g, 3, store)
    assert out.logits.shape == (1, 3, 32, 32)
    with pytest.raises(ValueError, match="channels"):
        fusion.aspp_fuse(_features(32, 32), Tensor(np.random.rand(1, 1, 32, 32)), None, 3, store)


def test_errors():
    store = fusion.parameter_init(0, 3)
    with pytest.raises(ValueError):
        fusion.parameter_init(0, 1)
    with pytest.raises(ValueError):
        fusion.aspp_fuse(_features(32, 32), Tensor(np.zeros((1, 1, 16, 16))), None, 3, store,
                         image_size=(32, 32))
    with pytest.raises(ValueError):
        fusion.aspp_fuse(_features(32, 32), None, None, 1, store, image_size=(32, 32))


def test_baseline_model_has_no_shape_parameters():
    cfg = model.ModelConfig(num_classes=4, shape_stream=False, gradients_input=True)
    assert cfg.gradients_input is False
    store = model.init_params(cfg, 0)
    assert store.names("shape") == []
    out = model.forward(store, cfg, Tensor(np.random.rand(1, 3, 32, 32)))
    assert out.boundary is None and out.categorical.logits.shape == (1, 4, 32, 32)


def test_full_graph_gradcheck():
    from gscnn.gradcheck import GRAPH_TOLERANCE
    assert model.full_graph_gradcheck() < GRAPH_TOLERANCE
