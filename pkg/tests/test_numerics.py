import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from flexhdr.numerics import (
    GradCheckError,
    ModelState,
    Tensor,
    adam_step,
    backward,
    bilinear_resample,
    checkpoint,
    concat,
    conv2d,
    grad_check,
    gradients,
    max_axis,
    mean,
    mul,
    pixel_grid,
    pool_streams,
    repeat_streams,
    set_max,
    stop_gradient,
    sum_all,
)
from flexhdr.numerics.checkpoint import CheckpointError

floats = st.floats(-10, 10, allow_nan=False, width=64)


def brute_conv(x, w, b, stride, pad):
    k = w.shape[0]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    n, h, wd, _ = xp.shape
    ho = (h - k) // stride + 1
    wo = (wd - k) // stride + 1
    out = np.zeros((n, ho, wo, w.shape[3]))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, i * stride : i * stride + k, j * stride : j * stride + k]
            out[:, i, j] = np.einsum("nabc,abcd->nd", patch, w)
    return out + b


@pytest.mark.parametrize("stride,k,pad", [(1, 3, 1), (2, 3, 1), (1, 1, 0), (1, 5, 2), (2, 3, 0), (1, 3, 0)])
def test_conv_matches_brute_force(rng, stride, k, pad):
    x = rng.normal(size=(2, 7, 6, 3))
    w = rng.normal(size=(k, k, 3, 4))
    b = rng.normal(size=4)
    got = conv2d(x, w, b, stride=stride, padding=pad).data
    np.testing.assert_allclose(got, brute_conv(x, w, b, stride, pad), atol=1e-12)


def test_conv_rejects_bad_shapes(rng):
    x = rng.normal(size=(1, 5, 5, 3))
    with pytest.raises(ValueError, match="input channels"):
        conv2d(x, rng.normal(size=(3, 3, 2, 4)))
    with pytest.raises(ValueError):
        conv2d(x, rng.normal(size=(2, 2, 3, 4)))
    with pytest.raises(ValueError):
        conv2d(x, rng.normal(size=(3, 3, 3, 4)), stride=3)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_gradcheck(rng, stride):
    x = rng.normal(size=(1, 5, 6, 2))
    w = Tensor(rng.normal(size=(3, 3, 2, 3)))
    proj = rng.normal(size=conv2d(x, w, stride=stride).shape)
    assert grad_check(lambda t: sum_all(mul(conv2d(t, w, stride=stride), proj)), x) < 1e-6


def test_backward_accumulates_shared_input():
    x = Tensor(np.array([2.0, -3.0]), requires_grad=True)
    y = sum_all(mul(x, x))  # d/dx = 2x
    backward(y)
    np.testing.assert_allclose(x.grad, [4.0, -6.0])


def test_gradients_are_zero_for_unused_params():
    a = Tensor(np.ones(3), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    g = gradients(sum_all(a), {"a": a, "b": b})
    assert g["b"].shape == (2,) and not g["b"].any()


def test_stop_gradient_blocks():
    a = Tensor(np.ones(3), requires_grad=True)
    g = gradients(sum_all(mul(stop_gradient(a), a)), {"a": a})
    np.testing.assert_allclose(g["a"], np.ones(3))


def test_set_max_ties_route_to_first_stream():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    b = Tensor(np.array([1.0, 3.0]), requires_grad=True)
    backward(sum_all(set_max([a, b])))
    np.testing.assert_array_equal(a.grad, [1.0, 0.0])
    np.testing.assert_array_equal(b.grad, [0.0, 1.0])


def test_set_max_validation():
    with pytest.raises(ValueError):
        set_max([])
    with pytest.raises(ValueError):
        set_max([np.zeros(2), np.zeros(3)])
    x = Tensor(np.arange(3.0))
    assert set_max([x]) is x


@given(arrays(np.float64, (3, 2, 4), elements=floats), st.permutations(range(3)))
def test_set_max_is_symmetric(x, perm):
    a = set_max([x[i] for i in range(3)]).data
    b = set_max([x[i] for i in perm]).data
    np.testing.assert_array_equal(a, b)


@given(arrays(np.float64, (6, 2, 3), elements=floats))
def test_pool_streams_is_stream_major_max(x):
    got = pool_streams(x, 3).data
    np.testing.assert_array_equal(got, x.reshape(3, 2, 2, 3).max(axis=0))
    np.testing.assert_array_equal(repeat_streams(got, 3).data, np.concatenate([got] * 3))


def test_bilinear_known_values():
    img = np.arange(12.0).reshape(1, 3, 4, 1)  # value = 4y + x
    coords = np.array([[[[1.5, 0.5], [3.0, 2.0], [-2.0, 1.0], [9.0, 9.0]]]])
    got = bilinear_resample(img, coords).data.ravel()
    np.testing.assert_allclose(got, [3.5, 11.0, 4.0, 11.0])


def test_bilinear_identity_grid(rng):
    x = rng.normal(size=(2, 5, 7, 3))
    grid = np.broadcast_to(pixel_grid(5, 7, np.float64), (2, 5, 7, 2))
    np.testing.assert_allclose(bilinear_resample(x, grid).data, x, atol=1e-12)


def test_bilinear_coordinate_gradient_zero_when_clamped():
    img = Tensor(np.arange(12.0).reshape(1, 3, 4, 1))
    c = Tensor(np.array([[[[-1.5, 0.5]]]]), requires_grad=True)
    backward(sum_all(bilinear_resample(img, c)))
    assert c.grad[..., 0] == 0.0 and c.grad[..., 1] == pytest.approx(4.0)


def test_max_axis_gradient():
    x = Tensor(np.array([[1.0, 5.0], [3.0, 2.0]]), requires_grad=True)
    backward(sum_all(max_axis(x, 0)))
    np.testing.assert_array_equal(x.grad, [[0, 1], [1, 0]])


def test_adam_first_step_moves_by_lr():
    st_ = ModelState({"w": np.array([1.0, -2.0, 0.5])})
    adam_step(st_, {"w": np.array([0.3, -4.0, 0.0])}, lr=0.1)
    # bias-corrected first step is lr * sign(g), and nothing for g = 0
    np.testing.assert_allclose(st_.params["w"], [0.9, -1.9, 0.5], atol=1e-6)
    assert st_.step == 1


def test_adam_matches_reference_recursion(rng):
    p = rng.normal(size=4)
    grads = [rng.normal(size=4) for _ in range(5)]
    st_ = ModelState({"w": p.copy()})
    m = np.zeros(4)
    v = np.zeros(4)
    ref = p.copy()
    for t, g in enumerate(grads, 1):
        adam_step(st_, {"w": g}, lr=0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(st_.params["w"], ref, rtol=1e-12)


def test_adam_only_restricts_updates():
    st_ = ModelState({"a": np.ones(2), "b": np.ones(2)})
    adam_step(st_, {"a": np.ones(2), "b": np.ones(2)}, lr=0.5, only={"a"})
    np.testing.assert_allclose(st_.params["b"], 1.0)
    assert "b" not in st_.m


def test_adam_converges_on_quadratic():
    st_ = ModelState({"w": np.array([5.0, -3.0])})
    for _ in range(2000):
        w = Tensor(st_.params["w"], requires_grad=True)
        loss = sum_all(mul(w, w))
        adam_step(st_, gradients(loss, {"w": w}), lr=0.05)
    assert np.abs(st_.params["w"]).max() < 1e-2


def _state(rng):
    s = ModelState({"conv.w": rng.normal(size=(3, 3, 2, 4)).astype(np.float32), "conv.b": rng.normal(size=4).astype(np.float32)})
    adam_step(s, {"conv.w": rng.normal(size=(3, 3, 2, 4)).astype(np.float32)}, lr=1e-3)
    return s


def test_checkpoint_round_trip_is_bit_exact(rng, tmp_path):
    s = _state(rng)
    path = tmp_path / "ck.bin"
    checkpoint.save(path, s)
    back = checkpoint.load(path)
    assert back.step == 1
    for d, e in ((s.params, back.params), (s.m, back.m), (s.v, back.v)):
        assert d.keys() == e.keys()
        for k in d:
            assert d[k].tobytes() == e[k].tobytes()
    assert checkpoint.to_bytes(back) == path.read_bytes()


def test_checkpoint_layout(rng):
    raw = checkpoint.to_bytes(_state(rng))
    assert raw[:8] == b"FLEXHDR1"
    (count,) = struct.unpack("<I", raw[8:12])
    assert count == 2 + 2 + 2 + 1  # params, .m for both, .v for both, step


def test_checkpoint_errors(rng):
    raw = checkpoint.to_bytes(_state(rng))
    with pytest.raises(CheckpointError):
        checkpoint.from_bytes(b"NOTMAGIC" + raw[8:])
    with pytest.raises(CheckpointError):
        checkpoint.from_bytes(raw[:-3])


def test_grad_check_catches_wrong_gradient():
    from flexhdr.numerics import make_result

    def bad_square(x):
        return make_result(x.data**2, (x,), lambda g: (g * x.data,), "bad")  # missing factor 2

    err = grad_check(lambda t: sum_all(bad_square(t)), np.array([1.0, 2.0]))
    assert err > 0.5


def test_grad_check_reports_non_finite():
    with pytest.raises(GradCheckError):
        grad_check(lambda t: sum_all(mul(t, np.inf)), np.array([1.0]))


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(-3, 3, width=64)))
def test_concat_mean_gradcheck(x):
    other = np.linspace(-1, 1, 4).reshape(2, 2)
    assert grad_check(lambda t: mean(mul(concat([t, other], axis=1), concat([t, other], axis=1))), x) < 1e-6
