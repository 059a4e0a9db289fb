import numpy as np
from hypothesis import given, settings, strategies as st

from flexhdr import attention
from flexhdr.layers import init_conv
from flexhdr.numerics import Tensor


def test_uncertainty_masked_difference():
    f_w = np.full((1, 2, 2, 3), 1.0)
    f_r = np.full((1, 2, 2, 3), 0.4)
    e_r = np.array([0.0, 0.5, 1.0, 0.25]).reshape(1, 2, 2, 1)
    u = attention.alignment_uncertainty(f_w, f_r, e_r).data
    np.testing.assert_allclose(u[..., 0].ravel(), [0.0, 0.3, 0.6, 0.15])


def _params(c, with_u, rng):
    p = {}
    init_conv(p, "attention.conv1", 3, (4 if with_u else 3) * c + 1, c, rng)
    init_conv(p, "attention.conv2", 3, c, c, rng)
    return {k: Tensor(v) for k, v in p.items()}


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_attention_in_unit_interval_and_gates(seed, with_u):
    rng = np.random.default_rng(seed)
    c = 3
    p = _params(c, with_u, rng)
    f_w, f_r = rng.normal(size=(2, 5, 5, c)), rng.normal(size=(2, 5, 5, c))
    e_w = rng.uniform(0, 1, (2, 5, 5, 1))
    u = attention.alignment_uncertainty(f_w, f_r, e_w) if with_u else None
    reg, a = attention.apply_attention(p, f_w, f_r, u, e_w, rng.normal(size=(2, 5, 5, c)))
    assert ((a.data > 0) & (a.data < 1)).all()
    np.testing.assert_allclose(reg.data, f_w * a.data * e_w)


def test_zero_confidence_zeroes_regulated_features():
    rng = np.random.default_rng(0)
    p = _params(2, True, rng)
    f = rng.normal(size=(1, 4, 4, 2))
    reg, _ = attention.apply_attention(p, f, f, np.zeros((1, 4, 4, 2)), np.zeros((1, 4, 4, 1)), np.zeros((1, 4, 4, 2)))
    assert not reg.data.any()
    assert not attention.regulate_reference(f, np.zeros((1, 4, 4, 1))).data.any()
