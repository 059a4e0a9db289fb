import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flexhdr import flow
from flexhdr.model import init_params
from flexhdr.numerics import Tensor, gradients, mean, pool_streams, sum_all


def test_zero_flow_warp_is_identity(rng):
    f = rng.normal(size=(2, 6, 7, 3))
    np.testing.assert_array_equal(flow.warp(f, np.zeros((2, 6, 7, 2))).data, f)


@settings(max_examples=20, deadline=None)
@given(st.integers(-2, 2), st.integers(-2, 2))
def test_integer_flow_shifts_interior(dx, dy):
    f = np.random.default_rng(0).normal(size=(1, 8, 8, 2))
    o = np.broadcast_to(np.array([dx, dy], dtype=np.float64), (1, 8, 8, 2))
    out = flow.warp(f, o).data
    # aligned(p) = source(p + o) wherever p + o is inside
    np.testing.assert_allclose(out[0, 2:6, 2:6], f[0, 2 + dy : 6 + dy, 2 + dx : 6 + dx])


def test_warp_rejects_grid_mismatch(rng):
    with pytest.raises(ValueError):
        flow.warp(rng.normal(size=(1, 4, 4, 3)), np.zeros((1, 4, 5, 2)))


def test_upsample_constant_flow_scales_by_factor():
    low = np.broadcast_to(np.array([0.5, -0.25]), (1, 2, 2, 2))
    up = flow.upsample_flow(low, 16, 16).data
    np.testing.assert_allclose(up[..., 0], 4.0)
    np.testing.assert_allclose(up[..., 1], -2.0)


def test_estimate_flow_zero_init_and_shape(tiny_cfg, tiny_params, rng):
    p = {k: Tensor(v) for k, v in tiny_params.items()}
    c = tiny_cfg.channels
    f_i, f_r = rng.normal(size=(2, 16, 16, c)), rng.normal(size=(2, 16, 16, c))
    e = rng.uniform(0, 1, (2, 16, 16, 1))
    g = flow.encode(p, f_i, f_r, e)
    assert g.shape == (2, 2, 2, tiny_cfg.widths[2])
    o = flow.estimate_flow(p, f_i, f_r, e, pool_streams(g, 1), iters=3, e_r=e)
    assert o.shape == (2, 16, 16, 2)
    # the last refiner conv starts at zero, so the initial flow is exactly zero
    assert not o.data.any()


def test_estimate_flow_needs_reference_encoding(tiny_params, rng):
    p = {k: Tensor(v) for k, v in tiny_params.items()}
    f = rng.normal(size=(1, 8, 8, 4))
    with pytest.raises(ValueError):
        flow.estimate_flow(p, f, f, np.ones((1, 8, 8, 1)), None)


def test_flow_head_receives_gradient(tiny_params, rng):
    p = {k: Tensor(v, requires_grad=True) for k, v in tiny_params.items()}
    f_i, f_r = rng.normal(size=(1, 16, 16, 4)), rng.normal(size=(1, 16, 16, 4))
    e = np.ones((1, 16, 16, 1))
    g = flow.encode(p, f_i, f_r, e)
    o = flow.estimate_flow(p, f_i, f_r, e, g, iters=2, e_r=e)
    loss = mean(flow.warp(f_i, o))
    grads = gradients(loss, p)
    assert np.abs(grads["flow.refine2.w"]).sum() > 0
