import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from specaware.config import LossConfig
from specaware.losses import charbonnier, cosine_similarity, sam_loss, total_loss
from specaware.numerics import Parameter, backward

finite = st.floats(-10, 10, allow_nan=False)


def test_charbonnier_values():
    x = np.ones((2, 3))
    assert charbonnier(x, x, 1e-3).item() == pytest.approx(1e-3, rel=1e-12)
    assert charbonnier(np.array([3.0]), np.array([0.0]), 1e-3).item() == pytest.approx(np.sqrt(9 + 1e-6))
    assert charbonnier(np.array([3.0]), np.array([0.0]), 1e-3).item() == pytest.approx(3.00000017, abs=1e-8)
    with pytest.raises(ValueError):
        charbonnier(np.ones(3), np.ones(4))


def test_charbonnier_gradient_zero_at_perfect_fit():
    y = Parameter(np.array([0.5, -1.0]))
    backward(charbonnier(np.array([0.5, -1.0]), y), [y])
    np.testing.assert_array_equal(y.grad, 0.0)


def test_sam_examples():
    x = np.array([[1.0, 2.0, 3.0]])
    assert sam_loss(x, 2 * x).item() == pytest.approx(0.0, abs=1e-12)
    assert sam_loss(np.array([[1.0, 0.0]]), np.array([[0.0, 3.0]])).item() == pytest.approx(1.0)
    assert sam_loss(x, -x).item() == pytest.approx(2.0)


def test_zero_norm_vectors_counted_not_nan():
    cos, zero = cosine_similarity(np.zeros((2, 3)), np.ones((2, 3)))
    assert zero == 2
    assert np.all(np.isfinite(cos.data))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (4, 6), elements=finite), arrays(np.float64, (4, 6), elements=finite),
       st.floats(1e-3, 1e3))
def test_sam_range_and_scale_invariance(x, y, scale):
    # outside the epsilon-floored regime |x||y| <= 1e-8
    norms = np.linalg.norm(x, axis=-1) * np.linalg.norm(y, axis=-1) * min(scale, 1.0)
    assume(np.all(norms > 1e-8))
    v = sam_loss(x, y).item()
    assert -1e-12 <= v <= 2 + 1e-12
    assert abs(sam_loss(x, scale * y).item() - v) < 1e-7


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (2, 3, 4, 5), elements=finite), arrays(np.float64, (2, 3, 4, 5), elements=finite),
       st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_total_loss_floor(x, y, alpha, beta):
    cfg = LossConfig(alpha=alpha, beta=beta)
    assert total_loss(x, y, cfg).total.item() >= alpha * cfg.epsilon - 1e-15


def test_total_loss_reductions(rng):
    x = rng.normal(size=(2, 5, 3, 4))
    y = rng.normal(size=(2, 5, 3, 4))
    only_ch = total_loss(x, y, LossConfig(alpha=1, beta=0)).total.item()
    assert only_ch == pytest.approx(charbonnier(x, y).item())
    perfect = total_loss(x, x.copy(), LossConfig())
    assert perfect.total.item() == pytest.approx(1e-3, abs=1e-12)
    assert perfect.sam == pytest.approx(0.0, abs=1e-12)


def test_sam_runs_along_channels_per_pixel(rng):
    x = rng.normal(size=(1, 2, 3, 4))
    y = rng.normal(size=(1, 2, 3, 4))
    res = total_loss(x, y, LossConfig(alpha=0, beta=1, masked_only=False))
    cos = np.sum(x * y, 2) / np.sqrt(np.sum(x * x, 2) * np.sum(y * y, 2))
    assert res.sam == pytest.approx(np.mean(1 - cos))


def test_masked_support(rng):
    x = rng.normal(size=(1, 4, 3, 4))
    y = rng.normal(size=(1, 4, 3, 4))
    masked = np.array([[True, False, True, False]])
    full = total_loss(x[:, masked[0]], y[:, masked[0]]).total.item()
    assert total_loss(x, y, LossConfig(), masked).total.item() == pytest.approx(full)
    y2 = y.copy()
    y2[:, 1] += 100.0  # visible patch: outside the loss support
    assert total_loss(x, y2, LossConfig(), masked).total.item() == pytest.approx(full)
    with pytest.raises(ValueError):
        total_loss(x, y, LossConfig(), np.zeros((1, 4), dtype=bool))


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        LossConfig(alpha=-1.0)
