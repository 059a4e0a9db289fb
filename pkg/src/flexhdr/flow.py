"""Exposure-aware iterative optical flow.

Backward-warp convention: the aligned image at pixel p samples the source
at p + O(p). Flow is estimated at 1/8 resolution by a shared refiner applied
``iters`` times to a zero-initialised running flow, then upsampled.
"""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .layers import conv
from .numerics import (
    Tensor,
    add,
    as_tensor,
    bilinear_resample,
    concat,
    leaky_relu,
    mul,
    pixel_grid,
)

DOWNSAMPLE = 8


def extract_features(params: Mapping[str, Tensor], x) -> Tensor:
    """3x3 conv + leaky ReLU over X_i = [I_i, L_i]; shared by every stream."""
    return leaky_relu(conv(params, "features", x))


def warp(f, flow) -> Tensor:
    """Backward-warp ``f`` (N x H x W x C) by ``flow`` (N x H x W x 2)."""
    f, flow = as_tensor(f), as_tensor(flow)
    if f.shape[:3] != flow.shape[:3]:
        raise ValueError(f"warp: feature grid {f.shape[:3]} does not match flow grid {flow.shape[:3]}")
    grid = pixel_grid(f.shape[1], f.shape[2], dtype=flow.dtype)
    return bilinear_resample(f, add(flow, grid))


def upsample_flow(flow, height: int, width: int, factor: int = DOWNSAMPLE) -> Tensor:
    """Bilinear upsampling of a low-resolution flow, displacements scaled by ``factor``."""
    flow = as_tensor(flow)
    n = flow.shape[0]
    coords = np.broadcast_to(pixel_grid(height, width, dtype=flow.dtype) / factor, (n, height, width, 2))
    return mul(bilinear_resample(flow, coords), float(factor))


def encode(params: Mapping[str, Tensor], f, f_ref, e) -> Tensor:
    """Three stride-2 convs over [F_i, F_r, E_i]: 8x downsampled encoder features."""
    g = concat([f, f_ref, e], axis=-1)
    for k in (1, 2, 3):
        g = leaky_relu(conv(params, f"flow.enc{k}", g, stride=2))
    return g


def refine(params: Mapping[str, Tensor], g_i, g_r, pooled_context, iters: int) -> Tensor:
    """Iterative low-resolution refinement. Returns flow in 1/8-resolution pixels."""
    ctx = leaky_relu(conv(params, "flow.share", concat([g_i, pooled_context], axis=-1)))
    n, h, w, _ = ctx.shape
    flow = Tensor(np.zeros((n, h, w, 2), dtype=ctx.dtype))
    for _ in range(iters):
        moved = warp(g_i, flow)
        hidden = leaky_relu(conv(params, "flow.refine1", concat([ctx, moved, g_r, flow], axis=-1)))
        flow = add(flow, conv(params, "flow.refine2", hidden))
    return flow


def estimate_flow(
    params: Mapping[str, Tensor],
    f_i,
    f_r,
    e_i,
    pooled_context,
    iters: int = 16,
    e_r=None,
    encoded: tuple[Tensor, Tensor] | None = None,
) -> Tensor:
    """Full-resolution flow aligning stream i to the reference.

    ``pooled_context`` is the set-max of every stream's encoder output, so the
    result for stream i does not depend on the order of the other streams.
    Either pass the reference confidence ``e_r`` or already computed
    ``encoded = (g_i, g_r)`` encoder outputs.
    """
    f_i, f_r = as_tensor(f_i), as_tensor(f_r)
    if f_i.shape != f_r.shape:
        raise ValueError(f"estimate_flow: feature shapes differ, {f_i.shape} vs {f_r.shape}")
    if encoded is None:
        if e_r is None:
            raise ValueError("estimate_flow needs e_r when encoder outputs are not supplied")
        g_i = encode(params, f_i, f_r, e_i)
        g_r = encode(params, f_r, f_r, e_r)
    else:
        g_i, g_r = encoded
    low = refine(params, g_i, g_r, pooled_context, iters)
    return upsample_flow(low, f_i.shape[1], f_i.shape[2])
