"""Optimization loop, frame-count policies and evaluation."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..imaging import FrameSet, capped, exposure_weighted_average, hdr_psnr, hdr_scale
from ..model import ModelConfig, batch_from_frame_sets, forward, init_params, merge_frame_set, photometric_terms
from ..numerics import ModelState, adam_step, checkpoint, gradients
from .losses import LossReport, default_extractor, loss_photometric, total_loss
from .scenes import Scene, SceneError, augment, make_synthetic_scene

LOG_COLUMNS = ("step", "l_tm", "l_phot", "l_vgg", "l_total", "psnr_mu", "psnr_l")


class NumericalAbort(RuntimeError):
    def __init__(self, step: int, what: str):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


@dataclass(frozen=True)
class FramePolicy:
    """``fixed:n`` keeps the reference plus n-1 random others; ``any`` samples
    uniformly over all subsets that contain the reference."""

    kind: str = "fixed"
    n: int | None = 3

    @classmethod
    def parse(cls, text: str) -> "FramePolicy":
        if text == "any":
            return cls("any", None)
        if text.startswith("fixed:"):
            try:
                n = int(text[6:])
            except ValueError:
                n = 0
            if n >= 1:
                return cls("fixed", n)
        raise ValueError(f"frames policy must be fixed:<n> or any, got {text!r}")

    def __str__(self):
        return "any" if self.kind == "any" else f"fixed:{self.n}"

    def sample(self, rng: np.random.Generator, n_total: int, ref: int) -> list[int]:
        others = [i for i in range(n_total) if i != ref]
        if self.kind == "any":
            keep = [i for i in others if rng.integers(2)]
        else:
            if self.n > n_total:
                raise ValueError(f"frames policy {self} needs {self.n} frames, scene has {n_total}")
            keep = list(rng.choice(others, self.n - 1, replace=False)) if self.n > 1 else []
        return sorted([ref] + [int(i) for i in keep])


def subset(frames: FrameSet, indices: Sequence[int]) -> FrameSet:
    ref = frames.reference_index
    if ref not in indices:
        raise ValueError("subset must keep the reference frame")
    return FrameSet([frames.frames[i] for i in indices], list(indices).index(ref))


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    steps: int = 200
    batch: int = 4
    crop: int | None = 64
    lr: float = 1e-4
    lr_schedule: str = "constant"               # constant | cosine (decays to 0 at ``steps``)
    seed: int = 0
    frames: str = "fixed:3"
    objective: str = "full"                     # full | photometric
    train_only: tuple[str, ...] | None = None   # parameter-name prefixes to update
    augment: bool = True                        # random crop, flips and quarter turns
    ckpt_every: int = 50
    val_every: int = 50
    out: str | None = None                      # checkpoint path
    log: str | None = None                      # metrics CSV path

    def __post_init__(self):
        self.policy = FramePolicy.parse(self.frames)
        if self.steps < 0 or self.batch < 1 or not self.lr > 0:
            raise ValueError("steps must be >= 0, batch >= 1 and lr > 0")
        if self.crop is not None and self.crop < 8:
            raise ValueError(f"crop must be at least 8, got {self.crop}")
        if self.objective not in ("full", "photometric"):
            raise ValueError(f"objective must be full or photometric, got {self.objective!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr schedule must be constant or cosine, got {self.lr_schedule!r}")
        if self.ckpt_every < 1 or self.val_every < 1:
            raise ValueError("ckpt_every and val_every must be positive")

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "cosine" and self.steps > 0:
            return self.lr * 0.5 * (1.0 + math.cos(math.pi * step / self.steps))
        return self.lr


def _check_scenes(scenes: Sequence[Scene], cfg: TrainConfig):
    if not scenes:
        raise SceneError("<train>", "no training scenes")
    for s in scenes:
        if cfg.objective == "full" and s.ground_truth is None:
            raise SceneError(s.name or "<scene>", "missing gt.pfm, needed for supervised training")
        if cfg.policy.kind == "fixed" and cfg.policy.n > len(s.frame_set):
            raise ValueError(f"frames policy {cfg.policy} needs {cfg.policy.n} frames, {s.name} has {len(s.frame_set)}")
        if cfg.crop is not None and min(s.frame_set.shape) < cfg.crop:
            raise SceneError(s.name or "<scene>", f"smaller than crop {cfg.crop}")
    if cfg.crop is None and len({s.frame_set.shape for s in scenes}) != 1:
        raise ValueError("scenes differ in size; set a crop")


def sample_batch(scenes: Sequence[Scene], cfg: TrainConfig, step: int):
    """Deterministic in (seed, step), so a resumed run sees the same batches.

    One frame subset is drawn per batch so every element has the same count.
    """
    rng = np.random.default_rng([cfg.seed, step])
    picks = rng.choice(len(scenes), cfg.batch, replace=len(scenes) < cfg.batch)
    first = scenes[picks[0]].frame_set
    keep = cfg.policy.sample(rng, len(first), first.reference_index)
    sets, gts = [], []
    for k in picks:
        seed = rng.integers(2**31)
        s = augment(scenes[k], seed, cfg.crop) if cfg.augment else scenes[k]
        fs = s.frame_set
        if (len(fs), fs.reference_index) == (len(first), first.reference_index):
            idx = keep
        else:
            if len(keep) > len(fs):
                raise ValueError(f"{s.name} has {len(fs)} frames, batch needs {len(keep)}")
            others = [i for i in range(len(fs)) if i != fs.reference_index]
            extra = rng.choice(others, len(keep) - 1, replace=False) if len(keep) > 1 else []
            idx = sorted([fs.reference_index] + [int(i) for i in extra])
        sets.append(subset(fs, idx))
        gts.append(None if s.ground_truth is None else s.ground_truth.radiance)
    return sets, gts


def _selected(params, prefixes):
    if prefixes is None:
        return None
    return {k for k in params if any(k.startswith(p) for p in prefixes)}


def train_step(state: ModelState, cfg: TrainConfig, sets, gts) -> LossReport:
    tensors = state.tensors()
    batch = batch_from_frame_sets(sets)
    out = forward(tensors, cfg.model, batch)
    phot = photometric_terms(out, batch.size, batch.n)
    if cfg.objective == "photometric":
        if phot is None:
            raise ValueError("photometric objective needs at least two frames")
        loss = loss_photometric(*phot)
        v = float(loss.data)
        report = LossReport(0.0, v, 0.0, v)
    else:
        gt = np.stack(gts)
        scales = np.array([hdr_scale(g) for g in gt])
        loss, report = total_loss(out.hdr, gt, phot, default_extractor(np.float32), scales)
    if not math.isfinite(report.l_total):
        raise NumericalAbort(state.step, "loss")
    grads = gradients(loss, tensors)
    if not all(np.isfinite(g).all() for g in grads.values()):
        raise NumericalAbort(state.step, "gradient")
    adam_step(state, grads, cfg.lr_at(state.step), only=_selected(state.params, cfg.train_only))
    return report


def evaluate(params, model: ModelConfig, scenes: Sequence[Scene], indices: Sequence[int] | None = None):
    """Per-scene (name, PSNR-mu, PSNR-L), capped at 100 dB; ``indices`` picks a frame subset."""
    rows = []
    for s in scenes:
        if s.ground_truth is None:
            raise SceneError(s.name or "<scene>", "no ground truth to evaluate against")
        fs = s.frame_set if indices is None else subset(s.frame_set, indices)
        hdr, _ = merge_frame_set(params, model, fs)
        mu, lin = hdr_psnr(hdr.radiance, s.ground_truth.radiance)
        rows.append((s.name, capped(mu), capped(lin)))
    return rows


def evaluate_baseline(scenes: Sequence[Scene], indices: Sequence[int] | None = None):
    """Same rows for the unaligned exposure-weighted average."""
    rows = []
    for s in scenes:
        fs = s.frame_set if indices is None else subset(s.frame_set, indices)
        mu, lin = hdr_psnr(exposure_weighted_average(fs), s.ground_truth.radiance)
        rows.append((s.name, capped(mu), capped(lin)))
    return rows


def mean_psnr(rows) -> tuple[float, float]:
    return float(np.mean([r[1] for r in rows])), float(np.mean([r[2] for r in rows]))


def _write_rows(path, rows, append: bool):
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if not append:
            w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r.get(c, "") for c in LOG_COLUMNS])


def train(
    cfg: TrainConfig,
    scenes: Sequence[Scene],
    val_scenes: Sequence[Scene] = (),
    state: ModelState | None = None,
    on_step: Callable[[int, LossReport], None] | None = None,
) -> tuple[ModelState, list[dict]]:
    """Run until ``cfg.steps`` total steps; a resumed ``state`` continues from its step.

    On a non-finite loss the run stops with :class:`NumericalAbort` before
    the bad update, so the checkpoint on disk is the last good one.
    """
    _check_scenes(scenes, cfg)
    if state is None:
        state = ModelState(init_params(cfg.model, cfg.seed))
    rows: list[dict] = []
    pending: list[dict] = []
    if cfg.log and not (state.step > 0 and os.path.exists(cfg.log)):
        _write_rows(cfg.log, [], append=False)

    def flush():
        if cfg.log and pending:
            _write_rows(cfg.log, pending, append=True)
        pending.clear()

    try:
        while state.step < cfg.steps:
            sets, gts = sample_batch(scenes, cfg, state.step)
            report = train_step(state, cfg, sets, gts)
            row = {"step": state.step, **report.as_row()}
            done = state.step == cfg.steps
            if val_scenes and (state.step % cfg.val_every == 0 or done):
                row["psnr_mu"], row["psnr_l"] = mean_psnr(evaluate(state.params, cfg.model, val_scenes))
            rows.append(row)
            pending.append(row)
            if on_step:
                on_step(state.step, report)
            if cfg.out and (state.step % cfg.ckpt_every == 0 or done):
                checkpoint.save(cfg.out, state)
                flush()
    finally:
        flush()
    if cfg.out and not rows:
        checkpoint.save(cfg.out, state)
    return state, rows


SYNTHETIC_EVS = {1: (0.0,), 2: (0.0, 2.0), 3: (-2.0, 0.0, 2.0), 4: (-2.0, 0.0, 2.0, 4.0)}


def synthetic_pool(seed: int, count: int = 16, size: int = 64, motion: str = "mixed", n_frames: int = 3):
    """``count`` synthetic scenes; disjoint seeds give disjoint pools."""
    evs = SYNTHETIC_EVS[n_frames]
    return [make_synthetic_scene(seed * 100003 + i, size, n_frames, evs, motion) for i in range(count)]
