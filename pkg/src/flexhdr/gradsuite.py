"""Finite-difference gradient suite: every differentiable op plus the full loss.

Each check builds a scalar from an op's output (a fixed random projection)
and compares its analytic gradient with central differences in float64.
Inputs are drawn away from kinks (|x| near 0 for abs/relu, integer
coordinates for bilinear sampling, knees of the confidence curve).
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import attention, exposure, flow
from .imaging import FrameSet, LdrFrame, tonemap_mu
from .model import ModelConfig, batch_from_frame_sets, forward, init_params, photometric_terms
from .numerics import ops
from .numerics import (
    Tensor,
    absolute,
    add,
    bilinear_resample,
    broadcast_to,
    clip,
    concat,
    conv2d,
    div,
    grad_check_params,
    leaky_relu,
    log1p,
    max_axis,
    mean,
    mul,
    pixel_grid,
    pool_streams,
    relu,
    repeat_streams,
    reshape,
    set_max,
    sigmoid,
    spatial_mean,
    stack,
    sub,
    sum_all,
    take,
)
from .training.losses import FeatureExtractor, loss_perceptual, loss_photometric, loss_tonemapped, total_loss

TOLERANCE = 1e-4
H = 1e-5


@dataclass
class CheckResult:
    name: str
    error: float
    where: str
    seconds: float

    @property
    def ok(self) -> bool:
        return self.error < TOLERANCE


def _proj(out: Tensor, rng_seed: int = 99) -> Tensor:
    w = np.random.default_rng(rng_seed).normal(size=out.shape)
    return sum_all(mul(out, Tensor(w)))


def _away(rng, shape, gap=0.1, scale=1.0):
    """Normal samples pushed at least ``gap`` away from zero."""
    x = rng.normal(0, scale, shape)
    return np.where(x >= 0, x + gap, x - gap)


def _distinct(rng, shape, gap=0.05):
    """Values whose pairwise gaps along axis 0 exceed ``gap``, so maxima are unique."""
    n = shape[0]
    base = rng.permutation(n)[(...,) + (None,) * (len(shape) - 1)] * gap * 2
    return np.broadcast_to(base, shape) + rng.uniform(0, gap, shape)


def _fractional_coords(rng, n, ho, wo, h, w):
    cx = rng.integers(0, w - 1, (n, ho, wo)) + rng.uniform(0.15, 0.85, (n, ho, wo))
    cy = rng.integers(0, h - 1, (n, ho, wo)) + rng.uniform(0.15, 0.85, (n, ho, wo))
    return np.stack([cx, cy], axis=-1)


def _simple(name, fn, inputs):
    return name, (lambda t: _proj(fn(t))), inputs


def _op_checks(rng) -> list[tuple[str, Callable, dict]]:
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(2, 3, 4))
    pos = rng.uniform(0.5, 2.0, (2, 3, 4))
    img = rng.normal(size=(2, 6, 6, 3))
    checks = [
        _simple("add", lambda t: add(t["a"], t["b"]), {"a": a, "b": rng.normal(size=(3, 4))}),
        _simple("sub", lambda t: sub(t["a"], t["b"]), {"a": a, "b": b}),
        _simple("mul", lambda t: mul(t["a"], t["b"]), {"a": a, "b": rng.normal(size=(1, 3, 1))}),
        _simple("div", lambda t: div(t["a"], t["b"]), {"a": a, "b": pos}),
        _simple("abs", lambda t: absolute(t["a"]), {"a": _away(rng, (2, 3, 4))}),
        _simple("log1p", lambda t: log1p(t["a"]), {"a": rng.uniform(0.0, 3.0, (2, 3, 4))}),
        _simple("clip", lambda t: clip(t["a"], -0.5, 0.5), {"a": np.concatenate([
            rng.uniform(-0.4, 0.4, 12), rng.uniform(0.6, 2.0, 6), rng.uniform(-2.0, -0.6, 6)]).reshape(2, 3, 4)}),
        _simple("relu", lambda t: relu(t["a"]), {"a": _away(rng, (2, 3, 4))}),
        _simple("leaky_relu", lambda t: leaky_relu(t["a"]), {"a": _away(rng, (2, 3, 4))}),
        _simple("sigmoid", lambda t: sigmoid(t["a"]), {"a": rng.normal(0, 3, (2, 3, 4))}),
        _simple("mean", lambda t: mul(mean(t["a"]), 7.0), {"a": a}),
        _simple("spatial_mean", lambda t: spatial_mean(t["a"]), {"a": img}),
        _simple("reshape", lambda t: reshape(t["a"], (6, 4)), {"a": a}),
        _simple("broadcast_to", lambda t: broadcast_to(t["a"], (2, 3, 4)), {"a": rng.normal(size=(3, 1))}),
        _simple("getitem", lambda t: t["a"][:, 1:, ::2], {"a": a}),
        _simple("take", lambda t: take(t["a"], [2, 0, 2], axis=1), {"a": a}),
        _simple("concat", lambda t: concat([t["a"], t["b"]], axis=-1), {"a": a, "b": rng.normal(size=(2, 3, 2))}),
        _simple("stack", lambda t: stack([t["a"], t["b"]], axis=1), {"a": a, "b": b}),
        _simple("max_axis", lambda t: max_axis(t["a"], axis=0), {"a": _distinct(rng, (4, 3, 5))}),
        _simple("set_max", lambda t: set_max([t["a"][0], t["a"][1], t["a"][2]]), {"a": _distinct(rng, (3, 2, 4))}),
        _simple("pool_streams", lambda t: pool_streams(t["a"], 3), {"a": _distinct(rng, (6, 2, 2, 3))}),
        _simple("repeat_streams", lambda t: repeat_streams(t["a"], 3), {"a": rng.normal(size=(2, 2, 2, 3))}),
        _simple("tonemap_mu", lambda t: tonemap_mu(t["a"]), {"a": rng.uniform(0.0, 1.0, (2, 3, 4))}),
    ]
    for stride, k, pad in ((1, 3, None), (2, 3, None), (1, 1, None), (1, 5, None), (2, 3, 0)):
        cin, cout = 3, 2
        checks.append(_simple(
            f"conv2d[s{stride},k{k},p{pad}]",
            lambda t, s=stride, p=pad: conv2d(t["x"], t["w"], t["b"], stride=s, padding=p),
            {"x": img, "w": rng.normal(size=(k, k, cin, cout)), "b": rng.normal(size=(cout,))},
        ))
    h, w = 5, 6
    checks.append(_simple(
        "bilinear_resample",
        lambda t: bilinear_resample(t["x"], t["c"]),
        {"x": rng.normal(size=(2, h, w, 3)), "c": _fractional_coords(rng, 2, 4, 4, h, w)},
    ))
    fl = _fractional_coords(rng, 2, h, w, h, w) - pixel_grid(h, w, np.float64)
    checks.append(_simple("warp", lambda t: flow.warp(t["f"], t["o"]), {"f": rng.normal(size=(2, h, w, 3)), "o": fl}))
    checks.append(_simple(
        "upsample_flow", lambda t: flow.upsample_flow(t["o"], 16, 16), {"o": rng.normal(size=(1, 2, 2, 2))},
    ))
    m = np.concatenate([rng.uniform(0.02, 0.2, 8), rng.uniform(0.35, 0.6, 8), rng.uniform(0.8, 0.98, 8)])
    m = rng.permutation(m).reshape(2, 3, 4, 1)

    def conf(t):
        p = exposure.ExposureParams(t["alpha"], t["beta"])
        return exposure.exposure_confidence(m, p)

    checks.append(_simple("exposure_confidence", conf, {
        "alpha": np.full((2, 1, 1, 1), 0.27), "beta": np.full((2, 1, 1, 1), 0.72)}))
    x = rng.uniform(0, 1, (2, 4, 4, 6))
    mi = x[..., :3].mean(-1, keepdims=True)

    def exp_params(t):
        p = exposure.predict_exposure_params(x, mi, t["w"], t["b"])
        return concat([p.alpha, p.beta], axis=-1)

    checks.append(_simple("exposure_params", exp_params, {"w": rng.normal(size=(3, 3, 7, 2)), "b": rng.normal(size=(2,))}))
    checks.append(_simple(
        "alignment_uncertainty",
        lambda t: attention.alignment_uncertainty(t["fw"], t["fr"], t["e"]),
        {"fw": rng.normal(size=(2, 4, 4, 3)) + 0.5, "fr": rng.normal(size=(2, 4, 4, 3)) - 0.5, "e": rng.uniform(0, 1, (2, 4, 4, 1))},
    ))
    return checks


def _loss_checks(rng) -> list[tuple[str, Callable, dict]]:
    p = rng.uniform(0.05, 0.95, (2, 8, 8, 3))
    g = rng.uniform(0.05, 0.95, (2, 8, 8, 3))
    g = np.where(np.abs(p - g) < 0.02, g + 0.04, g)
    ext = FeatureExtractor(dtype=np.float64)
    fw = rng.normal(size=(2, 4, 4, 3))
    fr = fw + _away(rng, (2, 4, 4, 3), 0.05, 0.5)
    er = rng.uniform(0, 1, (2, 4, 4, 1))
    return [
        ("loss_tonemapped", lambda t: loss_tonemapped(t["p"], g), {"p": p}),
        ("loss_photometric", lambda t: loss_photometric(t["fw"], fr, er), {"fw": fw}),
        ("loss_perceptual", lambda t: loss_perceptual(t["p"], g, ext), {"p": p}),
    ]


def gradcheck_scene(seed: int = 0, n: int = 4, size: int = 8) -> FrameSet:
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.05, 0.9, (size, size, 3))
    frames = []
    for i, ev in enumerate(np.linspace(-2, 2, n)):
        t = 2.0**ev
        shifted = np.roll(base, i, axis=1)
        frames.append(LdrFrame(np.clip((shifted**2.2 * t) ** (1 / 2.2) + rng.normal(0, 0.02, shifted.shape), 0, 1), t))
    return FrameSet(frames, reference_index=n // 2)


GRADCHECK_CONFIG = ModelConfig(channels=4, encoder_widths=(4, 4, 4), refine_width=4, rdb_layers=2, rdb_growth=2, flow_iters=2)


def end_to_end_check(seed: int = 0, cfg: ModelConfig = GRADCHECK_CONFIG, per_param: int = 3):
    """Total loss of the full network on a 4-frame 8x8 scene, every parameter tensor sampled."""
    rng = np.random.default_rng(seed)
    params = {k: v.astype(np.float64) for k, v in init_params(cfg, seed).items()}
    # lift the zero-initialised flow head so the warp receives gradient
    params["flow.refine2.w"] = rng.normal(0, 0.2, params["flow.refine2.w"].shape)
    params["flow.refine2.b"] = rng.normal(0, 0.2, params["flow.refine2.b"].shape)
    fs = gradcheck_scene(seed)
    batch = batch_from_frame_sets([fs], dtype=np.float64)
    gt = rng.uniform(0.05, 1.5, (1, 8, 8, 3))
    ext = FeatureExtractor(dtype=np.float64)

    def loss(t):
        out = forward(t, cfg, batch, dtype=np.float64)
        phot = photometric_terms(out, batch.size, batch.n, detach=False)
        total, _ = total_loss(out.hdr, gt, phot, ext, scales=np.array([gt.max() * 2.0]))
        return total

    return grad_check_params(loss, params, h=H, per_param=per_param, rng=rng)


def all_check_names() -> list[str]:
    rng = np.random.default_rng(0)
    return [c[0] for c in _op_checks(rng)] + [c[0] for c in _loss_checks(rng)] + ["end_to_end"]


def _matches(name: str, wanted: set[str] | None) -> bool:
    return wanted is None or name in wanted or name.split("[")[0] in wanted


def run_suite(seed: int = 0, ops_filter: set[str] | None = None, report: Callable[[CheckResult], None] | None = None):
    """Run the selected checks. ``ops_filter`` holds check names; ``conv2d``
    selects every conv2d variant."""
    if ops_filter is not None:
        unknown = {o for o in ops_filter if not any(_matches(n, {o}) for n in all_check_names())}
        if unknown:
            raise ValueError(f"unknown op(s): {', '.join(sorted(unknown))}")
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, inputs in _op_checks(rng) + _loss_checks(rng):
        if not _matches(name, ops_filter):
            continue
        t0 = time.perf_counter()
        err, where = grad_check_params(fn, inputs, h=H, per_param=None)
        results.append(CheckResult(name, err, where, time.perf_counter() - t0))
        if report:
            report(results[-1])
    if _matches("end_to_end", ops_filter):
        t0 = time.perf_counter()
        err, where = end_to_end_check(seed)
        results.append(CheckResult("end_to_end", err, where, time.perf_counter() - t0))
        if report:
            report(results[-1])
    return results


def inject_fault(op: str) -> None:
    """Test hook: flip the sign of an op's input gradient."""
    if op != "conv2d":
        raise ValueError(f"no fault hook for {op!r} (available: conv2d)")
    ops.FAULTS.add(op)


def clear_faults() -> None:
    ops.FAULTS.clear()
