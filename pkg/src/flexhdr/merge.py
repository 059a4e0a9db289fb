"""Multi-stage, permutation-invariant fusion (grouped residual dense block)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .layers import conv
from .numerics import (
    Tensor,
    add,
    as_tensor,
    concat,
    leaky_relu,
    pool_streams,
    relu,
    repeat_streams,
)

STAGES = 3


@dataclass(frozen=True)
class RdbConfig:
    layers: int = 4
    growth: int = 16

    def __post_init__(self):
        if self.layers < 1 or self.growth < 1:
            raise ValueError(f"RDB layers and growth must be positive, got {self.layers}, {self.growth}")


def rdb(params: Mapping[str, Tensor], prefix: str, x, layers: int) -> Tensor:
    feats = [as_tensor(x)]
    for l in range(layers):
        feats.append(leaky_relu(conv(params, f"{prefix}.conv{l}", concat(feats, axis=-1))))
    return add(feats[0], conv(params, f"{prefix}.fuse", concat(feats, axis=-1)))


def _stack(streams) -> tuple[Tensor, int]:
    if isinstance(streams, Tensor):
        raise TypeError("grdb_fuse takes a list of per-stream feature maps")
    if len(streams) == 0:
        raise ValueError("grdb_fuse needs at least one stream")
    shapes = {as_tensor(s).shape for s in streams}
    if len(shapes) != 1:
        raise ValueError(f"grdb_fuse streams differ in shape: {sorted(shapes)}")
    return concat(list(streams), axis=0), len(streams)


def grdb_fuse(params: Mapping[str, Tensor], streams: Sequence, rdb_cfg: RdbConfig) -> Tensor:
    """RDB per stream, then conv([F_i, max_j F_j]) after each of three stages; global max at the end.

    Each list entry may itself be a batch (B x H x W x C); streams are pooled
    per batch element.
    """
    s, n = _stack(streams)
    for k in range(STAGES):
        s = rdb(params, f"merge.rdb{k}", s, rdb_cfg.layers)
        shared = repeat_streams(pool_streams(s, n), n)
        s = conv(params, f"merge.share{k}", concat([s, shared], axis=-1))
    return pool_streams(s, n)


def concat_fuse(params: Mapping[str, Tensor], streams: Sequence, rdb_cfg: RdbConfig) -> Tensor:
    """Ablation baseline: channel concatenation in stream order, then the plain RDB chain."""
    s = conv(params, "merge.concat", concat([as_tensor(x) for x in streams], axis=-1))
    for k in range(STAGES):
        s = rdb(params, f"merge.rdb{k}", s, rdb_cfg.layers)
    return s


def reconstruct(params: Mapping[str, Tensor], fused, f_r_regulated) -> Tensor:
    """Global residual with the regulated reference, two refinement convs, ReLU."""
    x = add(fused, f_r_regulated)
    hidden = leaky_relu(conv(params, "merge.refine1", x))
    return relu(conv(params, "merge.refine2", hidden))
