"""The full network: features, exposure confidence, flow, attention, fusion.

Streams are laid out stream-major: an input of n frames for B scenes is an
array of shape (n*B, H, W, C) whose first B rows are the reference frames.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import attention, exposure, flow, merge
from .imaging import GAMMA, FrameSet, HdrImage
from .layers import init_conv
from .numerics import Tensor, concat, pool_streams, repeat_streams, stop_gradient


OUTPUT_BIAS = 0.1


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 64
    encoder_widths: tuple[int, int, int] | None = None   # default (C, 1.5C, 2C)
    refine_width: int | None = None                     # default 2C
    rdb_layers: int = 4
    rdb_growth: int = 16
    exposure: str = "learned"                           # learned | fixed
    align_uncertainty: bool = True
    fusion: str = "maxpool"                             # maxpool | concat
    concat_frames: int = 3
    use_flow: bool = True
    flow_iters: int = 16
    gamma: float = GAMMA

    def __post_init__(self):
        if self.exposure not in ("learned", "fixed"):
            raise ValueError(f"exposure mode must be learned or fixed, got {self.exposure!r}")
        if self.fusion not in ("maxpool", "concat"):
            raise ValueError(f"fusion must be maxpool or concat, got {self.fusion!r}")
        if self.channels < 1 or self.flow_iters < 0:
            raise ValueError("channels must be positive and flow_iters nonnegative")

    @property
    def widths(self) -> tuple[int, int, int]:
        c = self.channels
        return self.encoder_widths or (c, max(1, (3 * c) // 2), 2 * c)

    @property
    def refiner(self) -> int:
        return self.refine_width or 2 * self.channels

    @property
    def rdb(self) -> merge.RdbConfig:
        return merge.RdbConfig(self.rdb_layers, self.rdb_growth)


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    c = cfg.channels
    p: dict[str, np.ndarray] = {}
    init_conv(p, "features", 3, 6, c, rng)
    if cfg.exposure == "learned":
        init_conv(p, "exposure", 3, 7, 2, rng)
    if cfg.use_flow:
        w1, w2, w3 = cfg.widths
        init_conv(p, "flow.enc1", 3, 2 * c + 1, w1, rng)
        init_conv(p, "flow.enc2", 3, w1, w2, rng)
        init_conv(p, "flow.enc3", 3, w2, w3, rng)
        init_conv(p, "flow.share", 3, 2 * w3, w3, rng)
        init_conv(p, "flow.refine1", 3, 3 * w3 + 2, cfg.refiner, rng)
        init_conv(p, "flow.refine2", 3, cfg.refiner, 2, rng, zero=True)
    init_conv(p, "attention.conv1", 3, (4 if cfg.align_uncertainty else 3) * c + 1, c, rng)
    init_conv(p, "attention.conv2", 3, c, c, rng)
    if cfg.fusion == "concat":
        init_conv(p, "merge.concat", 1, cfg.concat_frames * c, c, rng)
    g = cfg.rdb_growth
    for k in range(merge.STAGES):
        for l in range(cfg.rdb_layers):
            init_conv(p, f"merge.rdb{k}.conv{l}", 3, c + l * g, g, rng)
        init_conv(p, f"merge.rdb{k}.fuse", 1, c + cfg.rdb_layers * g, c, rng)
        if cfg.fusion == "maxpool":
            init_conv(p, f"merge.share{k}", 3, 2 * c, c, rng)
    init_conv(p, "merge.refine1", 3, c, c, rng)
    # positive start keeps every output channel above the terminal ReLU
    init_conv(p, "merge.refine2", 3, c, 3, rng, bias=OUTPUT_BIAS)
    return p


def config_from_params(params: Mapping[str, np.ndarray], **overrides) -> ModelConfig:
    """Recover the architecture from parameter names and shapes."""
    c = params["features.w"].shape[3]
    kw: dict = dict(channels=c)
    kw["exposure"] = "learned" if "exposure.w" in params else "fixed"
    kw["use_flow"] = "flow.enc1.w" in params
    if kw["use_flow"]:
        kw["encoder_widths"] = tuple(params[f"flow.enc{k}.w"].shape[3] for k in (1, 2, 3))
        kw["refine_width"] = params["flow.refine1.w"].shape[3]
    kw["align_uncertainty"] = params["attention.conv1.w"].shape[2] == 4 * c + 1
    if "merge.concat.w" in params:
        kw["fusion"] = "concat"
        kw["concat_frames"] = params["merge.concat.w"].shape[2] // c
    layers = 0
    while f"merge.rdb0.conv{layers}.w" in params:
        layers += 1
    kw["rdb_layers"] = layers
    kw["rdb_growth"] = params["merge.rdb0.conv0.w"].shape[3]
    kw.update(overrides)
    return ModelConfig(**kw)


@dataclass
class Batch:
    """Frames of B scenes with the same count n, reference first."""

    ldr: np.ndarray        # n x B x H x W x 3
    times: np.ndarray      # n x B

    @property
    def n(self) -> int:
        return self.ldr.shape[0]

    @property
    def size(self) -> int:
        return self.ldr.shape[1]


def batch_from_frame_sets(sets: Sequence[FrameSet], dtype=np.float32) -> Batch:
    n = len(sets[0])
    if any(len(s) != n for s in sets):
        raise ValueError("all frame sets in a batch need the same frame count")
    ldr, times = [], []
    for s in sets:
        order = [s.reference_index] + [i for i in range(n) if i != s.reference_index]
        ldr.append(np.stack([s.frames[i].pixels for i in order]))
        times.append([s.frames[i].exposure_time for i in order])
    return Batch(np.stack(ldr, axis=1).astype(dtype), np.asarray(times, dtype=dtype).T.copy())


@dataclass
class Outputs:
    hdr: Tensor                         # B x H x W x 3
    features: Tensor                    # all streams
    confidence: Tensor                  # all streams, n*B x H x W x 1
    warped: Tensor | None = None        # non-reference streams
    warped_confidence: Tensor | None = None
    flows: Tensor | None = None
    attention: Tensor | None = None
    alpha: Tensor | None = None
    beta: Tensor | None = None
    extra: dict = field(default_factory=dict)

    def reference_features(self, b: int) -> Tensor:
        return self.features[:b]

    def reference_confidence(self, b: int) -> Tensor:
        return self.confidence[:b]


def network_inputs(batch: Batch, gamma: float = GAMMA, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """X_i = [I_i, L_i] and the RGB-mean image, both stream-major."""
    n, b, h, w, _ = batch.ldr.shape
    ldr = batch.ldr.reshape(n * b, h, w, 3).astype(np.float64)
    t = batch.times.reshape(n * b, 1, 1, 1).astype(np.float64)
    if (t <= 0).any():
        raise ValueError("exposure times must be positive")
    lin = ldr**gamma / t
    x = np.concatenate([ldr, lin], axis=-1).astype(dtype)
    mean_img = ldr.mean(axis=-1, keepdims=True).astype(dtype)
    return x, mean_img


def forward(params: Mapping[str, Tensor], cfg: ModelConfig, batch: Batch, dtype=np.float32) -> Outputs:
    n, b = batch.n, batch.size
    if cfg.fusion == "concat" and n != cfg.concat_frames:
        raise ValueError(f"concat fusion is built for {cfg.concat_frames} frames, got {n}")
    x_np, m_np = network_inputs(batch, cfg.gamma, dtype)
    x, mean_img = Tensor(x_np), Tensor(m_np)

    feats = flow.extract_features(params, x)
    if cfg.exposure == "learned":
        ep = exposure.predict_exposure_params(x, mean_img, params["exposure.w"], params["exposure.b"])
    else:
        ep = exposure.fixed_params(n * b, dtype)
    conf = exposure.exposure_confidence(mean_img, ep)
    f_r, e_r = feats[:b], conf[:b]
    reg_r = attention.regulate_reference(f_r, e_r)
    out = Outputs(hdr=None, features=feats, confidence=conf, alpha=ep.alpha, beta=ep.beta)

    streams = [reg_r]
    if n > 1:
        m = n - 1
        f_o, e_o = feats[b:], conf[b:]
        f_r_o, e_r_o = repeat_streams(f_r, m), repeat_streams(e_r, m)
        if cfg.use_flow:
            g = flow.encode(params, feats, repeat_streams(f_r, n), conf)
            pooled = repeat_streams(pool_streams(g, n), m)
            o = flow.estimate_flow(
                params, f_o, f_r_o, e_o, pooled, cfg.flow_iters,
                encoded=(g[b:], repeat_streams(g[:b], m)),
            )
            f_w, e_w = flow.warp(f_o, o), flow.warp(e_o, o)
            out.flows = o
        else:
            f_w, e_w = f_o, e_o
        u = attention.alignment_uncertainty(f_w, f_r_o, e_r_o) if cfg.align_uncertainty else None
        att_ctx = repeat_streams(pool_streams(concat([f_r, f_w], axis=0), n), m)
        reg_o, att = attention.apply_attention(params, f_w, f_r_o, u, e_w, att_ctx)
        out.warped, out.warped_confidence, out.attention = f_w, e_w, att
        streams += [reg_o[i * b : (i + 1) * b] for i in range(m)]

    if cfg.fusion == "maxpool":
        fused = merge.grdb_fuse(params, streams, cfg.rdb)
    else:
        fused = merge.concat_fuse(params, streams, cfg.rdb)
    out.hdr = merge.reconstruct(params, fused, reg_r)
    return out


def photometric_terms(out: Outputs, b: int, n: int, detach: bool = True):
    """(F_w, F_r, E_r) for the self-supervised flow loss.

    The reference side is held constant unless ``detach`` is False (used by
    finite-difference checks, which see the undetached function).
    """
    if out.warped is None:
        return None
    m = n - 1
    f_r, e_r = out.features[:b], out.confidence[:b]
    if detach:
        f_r, e_r = stop_gradient(f_r), stop_gradient(e_r)
    return out.warped, repeat_streams(f_r, m), repeat_streams(e_r, m)


def merge_frame_set(
    params: Mapping[str, np.ndarray],
    cfg: ModelConfig,
    frames: FrameSet,
) -> tuple[HdrImage, Outputs]:
    """Inference on one frame set; output is aligned to ``frames.reference_index``."""
    tensors = {k: Tensor(v) for k, v in params.items()}
    out = forward(tensors, cfg, batch_from_frame_sets([frames]))
    return HdrImage(out.hdr.data[0]), out


def with_iters(cfg: ModelConfig, iters: int | None) -> ModelConfig:
    return cfg if iters is None else replace(cfg, flow_iters=iters)
