import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from flexhdr.imaging import tonemap_mu
from flexhdr.numerics import Tensor, grad_check
from flexhdr.training import (
    VGG_WEIGHT,
    FeatureExtractor,
    default_extractor,
    loss_perceptual,
    loss_photometric,
    loss_tonemapped,
    total_loss,
)

unit = st.floats(0, 1, width=64)


def test_tonemapped_zero_and_offset():
    g = np.full((1, 4, 4, 3), 0.3)
    assert loss_tonemapped(g, g).item() == 0.0
    # choose pred so that T(pred) = T(g) + 0.01 exactly
    mu = 5000.0
    target_t = tonemap_mu(g) + 0.01
    pred = np.expm1(target_t * np.log1p(mu)) / mu
    assert loss_tonemapped(pred, g).item() == pytest.approx(0.01, abs=1e-12)


def test_tonemapped_shape_mismatch():
    with pytest.raises(ValueError):
        loss_tonemapped(np.zeros((1, 2, 2, 3)), np.zeros((1, 2, 3, 3)))


def test_tonemapped_gradcheck(rng):
    g = rng.uniform(0, 1, (1, 4, 4, 3))
    p = rng.uniform(0, 1, (1, 4, 4, 3))
    p = np.where(np.abs(p - g) < 0.02, np.clip(g + 0.05, 0, 1), p)
    assert grad_check(lambda t: loss_tonemapped(t, g), p) < 1e-4


def test_photometric_examples():
    f = np.ones((2, 3, 3, 4))
    assert loss_photometric(f, f, np.ones((2, 3, 3, 1))).item() == 0.0
    assert loss_photometric(f, f * 0, np.zeros((2, 3, 3, 1))).item() == 0.0
    assert loss_photometric(f + 0.2, f, np.full((2, 3, 3, 1), 0.5)).item() == pytest.approx(0.1)


def test_perceptual_zero_and_nonnegative(rng):
    g = rng.uniform(0, 1, (1, 16, 16, 3))
    ext = FeatureExtractor()
    assert loss_perceptual(g, g, ext).item() == 0.0
    assert loss_perceptual(rng.uniform(0, 1, g.shape), g, ext).item() > 0.0


def test_extractor_is_fixed_and_has_three_taps():
    a, b = FeatureExtractor(), FeatureExtractor()
    for k in a.params:
        assert a.params[k].data.tobytes() == b.params[k].data.tobytes()
        assert not a.params[k].requires_grad
    feats = a(np.zeros((1, 16, 16, 3), dtype=np.float32))
    assert len(feats) == 3
    assert default_extractor() is default_extractor()


@settings(max_examples=15, deadline=None)
@given(arrays(np.float64, (1, 8, 8, 3), elements=st.floats(0, 4, width=64)), arrays(np.float64, (1, 8, 8, 3), elements=st.floats(0, 4, width=64)))
def test_total_is_sum_of_logged_terms(pred, gt):
    f = np.random.default_rng(0).normal(size=(1, 8, 8, 2))
    total, r = total_loss(pred, gt, (f, f * 0.5, np.full((1, 8, 8, 1), 0.7)))
    assert r.l_total == pytest.approx(r.l_tm + r.l_phot + VGG_WEIGHT * r.l_vgg, abs=1e-6)
    assert total.item() == r.l_total
    assert min(r.l_tm, r.l_phot, r.l_vgg) >= 0


def test_total_zero_on_perfect_static_reconstruction(rng):
    gt = rng.uniform(0, 2, (2, 8, 8, 3)).astype(np.float32)
    f = rng.normal(size=(2, 8, 8, 4)).astype(np.float32)
    _, r = total_loss(gt, gt, (f, f, np.ones((2, 8, 8, 1), np.float32)))
    assert r.l_total == 0.0
    _, r = total_loss(gt, gt, None)
    assert r.l_phot == 0.0
