"""Alignment uncertainty and the exposure/alignment-aware attention gate."""
from __future__ import annotations

from typing import Mapping

from .layers import conv
from .numerics import Tensor, absolute, as_tensor, concat, leaky_relu, mul, sigmoid, sub


def alignment_uncertainty(f_w, f_r, e_r) -> Tensor:
    """|F_w - F_r| masked by the reference confidence (broadcast over channels)."""
    return mul(absolute(sub(f_w, f_r)), e_r)


def attention_map(
    params: Mapping[str, Tensor],
    f_w,
    f_r,
    u,
    e_w,
    pooled_context,
) -> Tensor:
    """Two 3x3 convs and a sigmoid; ``u=None`` drops the uncertainty input (ablation)."""
    parts = [f_w, f_r] + ([u] if u is not None else []) + [e_w, pooled_context]
    hidden = leaky_relu(conv(params, "attention.conv1", concat(parts, axis=-1)))
    return sigmoid(conv(params, "attention.conv2", hidden))


def apply_attention(
    params: Mapping[str, Tensor],
    f_w,
    f_r,
    u,
    e_w,
    pooled_context,
) -> tuple[Tensor, Tensor]:
    """Regulated features F_w * A * E_w, plus the attention map itself."""
    a = attention_map(params, f_w, f_r, u, e_w, pooled_context)
    return mul(mul(as_tensor(f_w), a), e_w), a


def regulate_reference(f_r, e_r) -> Tensor:
    return mul(f_r, e_r)
