"""Desk-scale experiments shared by scripts/ and the acceptance tests."""
from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from .imaging import FrameSet, LdrFrame, capped, hdr_psnr
from .model import ModelConfig, init_params, merge_frame_set
from .training import (
    TrainConfig,
    evaluate,
    evaluate_baseline,
    make_synthetic_scene,
    mean_psnr,
    subset,
    synthetic_pool,
    train,
)

DESK = ModelConfig(channels=16, rdb_layers=3, rdb_growth=8, flow_iters=4)
TRAIN_SEED, VAL_SEED = 1, 2
SMOKE_LR = 3e-4


def smoke_config(model: ModelConfig = DESK, steps: int = 200, frames: str = "fixed:3", **kw) -> TrainConfig:
    return TrainConfig(model=model, steps=steps, batch=4, crop=64, lr=SMOKE_LR, seed=0, frames=frames, **kw)


def moving_average(x, k: int) -> np.ndarray:
    return np.convolve(np.asarray(x, dtype=np.float64), np.ones(k) / k, mode="valid")


def smoke_run(model: ModelConfig = DESK, steps: int = 200, n_frames: int = 3, out=None, log=None, **kw):
    """Train on 16 synthetic 64x64 dynamic scenes, score 4 held-out ones.

    Returns the relative drop of l_total (first vs last 5-step average), the
    model and baseline PSNR-mu, and the wall time.
    """
    scenes = synthetic_pool(TRAIN_SEED, 16, 64, "mixed", n_frames)
    val = synthetic_pool(VAL_SEED, 4, 64, "mixed", n_frames)
    cfg = smoke_config(model, steps, out=out, log=log, **kw)
    t0 = time.perf_counter()
    state, rows = train(cfg, scenes)
    seconds = time.perf_counter() - t0
    ma = moving_average([r["l_total"] for r in rows], 5)
    psnr = mean_psnr(evaluate(state.params, model, val))
    base = mean_psnr(evaluate_baseline(val))
    return {
        "state": state,
        "rows": rows,
        "drop": 1.0 - ma[-1] / ma[0],
        "psnr_mu": psnr[0],
        "baseline_mu": base[0],
        "seconds": seconds,
    }


# --- flow recovery ---------------------------------------------------------

SHIFT = (4.0, 0.0)


def shifted_pair(seed: int = 0, size: int = 64):
    return make_synthetic_scene(seed, size, 2, (0.0, 0.0), motion="translation", shifts=[(0.0, 0.0), SHIFT])


def endpoint_error(params, model: ModelConfig, scene, threshold: float = 0.9) -> tuple[float, float]:
    """Mean EPE on pixels where the reference confidence exceeds ``threshold``, and that pixel fraction."""
    _, out = merge_frame_set(params, model, scene.frame_set)
    err = np.linalg.norm(out.flows.data[0] - scene.flows[1], axis=-1)
    mask = out.reference_confidence(1).data[0, ..., 0] > threshold
    return float(err[mask].mean()), float(mask.mean())


def flow_recovery(steps: int = 300, lr: float = 1e-3, seed: int = 0, schedule: str = "cosine", model: ModelConfig = DESK):
    """Update only the flow network with the photometric loss on one shifted pair."""
    scene = shifted_pair(seed)
    cfg = TrainConfig(model=model, steps=steps, batch=1, crop=None, lr=lr, seed=seed, frames="fixed:2",
                      objective="photometric", train_only=("flow.",), augment=False, lr_schedule=schedule)
    t0 = time.perf_counter()
    state, rows = train(cfg, [scene])
    seconds = time.perf_counter() - t0
    epe, frac = endpoint_error(state.params, model, scene)
    ma = moving_average([r["l_phot"] for r in rows], 10)
    return {
        "epe": epe,
        "mask_fraction": frac,
        "max_rise": float(np.diff(ma).max()),
        "l_phot": [r["l_phot"] for r in rows],
        "seconds": seconds,
    }


# --- frame-count regimes ---------------------------------------------------

M_ONLY_STEPS = 800


def m_only_gap(steps: int = M_ONLY_STEPS):
    """Train on the middle exposure alone; PSNR-mu on M versus on S+M+L."""
    scenes, val = synthetic_pool(TRAIN_SEED), synthetic_pool(VAL_SEED, 4)
    state, _ = train(smoke_config(steps=steps, frames="fixed:1"), scenes)
    ref = val[0].frame_set.reference_index
    matched = mean_psnr(evaluate(state.params, DESK, val, [ref]))[0]
    full = mean_psnr(evaluate(state.params, DESK, val))[0]
    return {"matched": matched, "full": full, "drop": matched - full}


def flexible_model(steps: int = 200, out=None):
    """One model trained with a random frame subset per batch on 4-exposure scenes."""
    scenes = synthetic_pool(TRAIN_SEED, 16, 64, "mixed", 4)
    state, _ = train(smoke_config(steps=steps, frames="any", out=out), scenes)
    return state


def flexible_inference(params, model: ModelConfig = DESK, seed: int = VAL_SEED):
    """Merge every frame count 1-4 with every frame in turn as reference.

    Rows are (n, reference, PSNR-mu); PSNR is None unless the reference is
    the frame the ground truth was rendered for.
    """
    scene = synthetic_pool(seed, 1, 64, "mixed", 4)[0]
    gt_ref = scene.frame_set.reference_index
    rows = []
    for n in range(1, 5):
        idx = sorted({gt_ref, *[i for i in range(4) if i != gt_ref][: n - 1]})
        for r in range(n):
            fs = subset(scene.frame_set, idx)
            fs = FrameSet(fs.frames, r)
            hdr, _ = merge_frame_set(params, model, fs)
            score = capped(hdr_psnr(hdr.radiance, scene.ground_truth.radiance)[0]) if idx[r] == gt_ref else None
            rows.append((n, r, score))
    return rows


# --- strict gating ---------------------------------------------------------

def nonnegative_params(model: ModelConfig, seed: int = 0):
    """Feature and merge weights made nonnegative with zero biases, so every merge activation is >= 0."""
    p = init_params(model, seed)
    for k in p:
        if k.startswith(("features.", "merge.")):
            p[k] = np.abs(p[k]) if k.endswith(".w") else np.zeros_like(p[k])
    return p


def gating_difference(model: ModelConfig = DESK, seed: int = 0, size: int = 16) -> float:
    """Max change from adding a fully saturated second frame to a single reference frame."""
    rng = np.random.default_rng(seed)
    p = nonnegative_params(model, seed)
    ref = LdrFrame(rng.uniform(0.2, 0.8, (size, size, 3)), 1.0)
    saturated = LdrFrame(np.ones((size, size, 3)), 4.0)
    alone, _ = merge_frame_set(p, model, FrameSet([ref], 0))
    both, out = merge_frame_set(p, model, FrameSet([ref, saturated], 0))
    if out.confidence.data[1:].any():
        raise RuntimeError("saturated frame did not get zero confidence")
    return float(np.abs(alone.radiance - both.radiance).max())


ABLATIONS = {
    "exposure=fixed": dict(exposure="fixed"),
    "align_uncertainty=off": dict(align_uncertainty=False),
    "fusion=concat": dict(fusion="concat", concat_frames=3),
}


def ablation_model(name: str) -> ModelConfig:
    return replace(DESK, **ABLATIONS[name])
