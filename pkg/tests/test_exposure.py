import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from flexhdr.exposure import (
    FIXED_ALPHA,
    FIXED_BETA,
    ExposureParams,
    confidence_np,
    exposure_confidence,
    fixed_params,
    predict_exposure_params,
    squash,
)
from flexhdr.numerics import Tensor, grad_check, sum_all


@pytest.mark.parametrize("m,e", [(0.0, 0.0), (0.125, 0.5), (0.25, 1.0), (0.5, 1.0), (0.75, 1.0), (0.9, 0.4), (1.0, 0.0)])
def test_confidence_unit_values(m, e):
    assert confidence_np(np.array([m]), 0.25, 0.75)[0] == pytest.approx(e, abs=1e-12)


def test_confidence_tensor_matches_numpy():
    m = np.linspace(0, 1, 11).reshape(1, 11, 1, 1)
    p = ExposureParams(Tensor(np.full((1, 1, 1, 1), 0.25)), Tensor(np.full((1, 1, 1, 1), 0.75)))
    np.testing.assert_allclose(exposure_confidence(m, p).data, confidence_np(m, 0.25, 0.75))


def test_fixed_mode_values():
    p = fixed_params(3)
    assert p.alpha.shape == (3, 1, 1, 1)
    np.testing.assert_allclose(p.alpha.data, FIXED_ALPHA)
    np.testing.assert_allclose(p.beta.data, FIXED_BETA)


@given(arrays(np.float64, (5, 1, 1, 2), elements=st.floats(-60, 60, width=64)))
def test_squash_bounds(logits):
    p = squash(Tensor(logits))
    a, b = p.alpha.data, p.beta.data
    assert (a >= 0).all() and (a <= 0.5).all() and (b >= 0.5).all() and (b <= 1).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_predicted_knees_strictly_ordered(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 4, (2, 6, 6, 6)).astype(np.float32)
    mi = x[..., :3].mean(-1, keepdims=True)
    w = rng.normal(0, 0.3, (3, 3, 7, 2)).astype(np.float32)
    p = predict_exposure_params(x, mi, w, rng.normal(size=2).astype(np.float32))
    a, b = p.alpha.data, p.beta.data
    assert (0 < a).all() and (a < 0.5).all() and (0.5 < b).all() and (b < 1).all()


def test_confidence_gradient_wrt_knees():
    m = np.array([0.05, 0.1, 0.5, 0.9, 0.95]).reshape(1, 5, 1, 1)
    beta = Tensor(np.full((1, 1, 1, 1), 0.7))
    err = grad_check(lambda a: sum_all(exposure_confidence(m, ExposureParams(a, beta))), np.full((1, 1, 1, 1), 0.3))
    assert err < 1e-6
    alpha = Tensor(np.full((1, 1, 1, 1), 0.3))
    err = grad_check(lambda b: sum_all(exposure_confidence(m, ExposureParams(alpha, b))), np.full((1, 1, 1, 1), 0.7))
    assert err < 1e-6


def test_confidence_zero_at_both_ends_for_any_knees():
    for a, b in ((0.1, 0.6), (0.4, 0.9)):
        e = confidence_np(np.array([0.0, 1.0]), a, b)
        np.testing.assert_array_equal(e, [0.0, 0.0])
