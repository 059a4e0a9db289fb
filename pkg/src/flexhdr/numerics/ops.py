"""Differentiable ops used by the HDR pipeline.

Layout is channels-last everywhere: N x H x W x C, with H x W x C accepted
by the spatial ops and treated as a batch of one.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, make_result

# Names of ops whose backward is deliberately corrupted. Test hook only.
FAULTS: set[str] = set()


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    a = as_tensor(a)
    b = as_tensor(b)
    # python scalars must not promote f32 graphs to f64
    if a.data.ndim == 0 and not a.requires_grad and a.dtype != b.dtype:
        a = Tensor(a.data.astype(b.dtype))
    if b.data.ndim == 0 and not b.requires_grad and b.dtype != a.dtype:
        b = Tensor(b.data.astype(a.dtype))
    return a, b


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), bw, "div")


def absolute(x) -> Tensor:
    x = as_tensor(x)
    return make_result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def log1p(x) -> Tensor:
    x = as_tensor(x)
    return make_result(np.log1p(x.data), (x,), lambda g: (g / (1.0 + x.data),), "log1p")


def clip(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return make_result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return make_result(x.data * pos, (x,), lambda g: (g * pos,), "relu")


def leaky_relu(x, slope: float = 0.1) -> Tensor:
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return make_result(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out[~pos] = ex / (1.0 + ex)
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def activation(x, mode: str) -> Tensor:
    if mode == "relu":
        return relu(x)
    if mode == "leaky_relu":
        return leaky_relu(x, 0.1)
    if mode == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation mode {mode!r}")


def stop_gradient(x) -> Tensor:
    return Tensor(as_tensor(x).data)


# --- reductions ------------------------------------------------------------

def sum_all(x) -> Tensor:
    x = as_tensor(x)
    return make_result(x.data.sum(), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size

    def bw(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return make_result(x.data.mean(dtype=x.dtype), (x,), bw, "mean")


def spatial_mean(x) -> Tensor:
    """Per-channel mean over H and W; keeps singleton spatial axes."""
    x = as_tensor(x)
    if x.ndim not in (3, 4):
        raise ValueError(f"spatial_mean expects HxWxC or NxHxWxC, got shape {x.shape}")
    axes = (0, 1) if x.ndim == 3 else (1, 2)
    count = x.shape[axes[0]] * x.shape[axes[1]]

    def bw(g):
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype),)

    return make_result(x.data.mean(axis=axes, keepdims=True, dtype=x.dtype), (x,), bw, "spatial_mean")


# --- shape -----------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    return make_result(
        np.broadcast_to(x.data, shape).copy(), (x,), lambda g: (_unbroadcast(g, x.shape),), "broadcast_to"
    )


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)

    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)

    def bw(g):
        out = np.zeros_like(x.data)
        if basic:
            out[idx] = g
        else:
            np.add.at(out, idx, g)
        return (out,)

    return make_result(x.data[idx], (x,), bw, "getitem")


def take(x, indices, axis: int = 0) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    unique = len(np.unique(idx)) == len(idx)

    def bw(g):
        out = np.zeros_like(x.data)
        gm = np.moveaxis(g, axis, 0)
        om = np.moveaxis(out, axis, 0)
        if unique:
            om[idx] += gm
        else:
            np.add.at(om, idx, gm)
        return (out,)

    return make_result(np.take(x.data, idx, axis=axis), (x,), bw, "take")


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ValueError("concat of an empty list")
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return make_result(np.concatenate([x.data for x in xs], axis=axis), xs, bw, "concat")


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ValueError("stack of an empty list")

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_result(np.stack([x.data for x in xs], axis=axis), xs, bw, "stack")


# --- set pooling -----------------------------------------------------------

def max_axis(x, axis: int) -> Tensor:
    """Max along one axis. Ties route the gradient to the lowest index."""
    x = as_tensor(x)
    winner = np.argmax(x.data, axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(winner, axis), axis=axis).squeeze(axis)

    def bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, np.expand_dims(winner, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return make_result(out, (x,), bw, "max")


def set_max(streams: Sequence) -> Tensor:
    """Elementwise maximum over a nonempty list of equally shaped arrays."""
    if len(streams) == 0:
        raise ValueError("set_max needs at least one stream")
    shapes = {as_tensor(s).shape for s in streams}
    if len(shapes) != 1:
        raise ValueError(f"set_max streams differ in shape: {sorted(shapes)}")
    if len(streams) == 1:
        return as_tensor(streams[0])
    return max_axis(stack(streams, axis=0), axis=0)


def pool_streams(x, n: int) -> Tensor:
    """set_max across streams of a stream-major batch.

    ``x`` has shape (n*B, ...) with stream ``i`` of scene ``b`` at row
    ``i*B + b``; returns (B, ...).
    """
    x = as_tensor(x)
    b = x.shape[0] // n
    if b * n != x.shape[0]:
        raise ValueError(f"leading axis {x.shape[0]} is not a multiple of stream count {n}")
    if n == 1:
        return x
    return max_axis(reshape(x, (n, b) + x.shape[1:]), axis=0)


def repeat_streams(x, n: int) -> Tensor:
    """(B, ...) -> (n*B, ...), one copy per stream, matching :func:`pool_streams`."""
    x = as_tensor(x)
    if n == 1:
        return x
    b = x.shape[0]
    expanded = broadcast_to(reshape(x, (1, b) + x.shape[1:]), (n, b) + x.shape[1:])
    return reshape(expanded, (n * b,) + x.shape[1:])


# --- convolution -----------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    # (N, Ho, Wo, C, kh, kw) -> rows ordered (kh, kw, C) to match the weight layout
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, k * k * xp.shape[3])


def _valid_corr(xp: np.ndarray, wk: np.ndarray) -> np.ndarray:
    """Stride-1 'valid' correlation as k*k matmuls over row-shifted views.

    On the flattened padded grid, tap (i, j) is a constant row offset
    i*Wp + j, so every tap is one contiguous slice. Rows that wrap around
    an image edge land outside the cropped result.
    """
    n, hp, wp, c = xp.shape
    k, cout = wk.shape[0], wk.shape[3]
    flat = np.ascontiguousarray(xp).reshape(-1, c)
    span = (k - 1) * wp + (k - 1)
    rows = flat.shape[0] - span
    acc = np.zeros((flat.shape[0], cout), dtype=np.result_type(xp, wk))
    for i in range(k):
        for j in range(k):
            o = i * wp + j
            acc[:rows] += flat[o : o + rows] @ wk[i, j]
    return acc.reshape(n, hp, wp, cout)[:, : hp - k + 1, : wp - k + 1]


def _valid_corr_weight_grad(xp: np.ndarray, g: np.ndarray, k: int) -> np.ndarray:
    n, hp, wp, c = xp.shape
    cout = g.shape[3]
    flat = np.ascontiguousarray(xp).reshape(-1, c)
    gfull = np.zeros((n, hp, wp, cout), dtype=g.dtype)
    gfull[:, : g.shape[1], : g.shape[2]] = g
    gflat = gfull.reshape(-1, cout)
    span = (k - 1) * wp + (k - 1)
    rows = flat.shape[0] - span
    gw = np.empty((k, k, c, cout), dtype=np.result_type(xp, g))
    for i in range(k):
        for j in range(k):
            o = i * wp + j
            gw[i, j] = flat[o : o + rows].T @ gflat[:rows]
    return gw


def conv2d(x, weight, bias=None, stride: int = 1, padding: int | None = None) -> Tensor:
    """2-D cross-correlation, input N x H x W x Cin, weight k x k x Cin x Cout."""
    x = as_tensor(x)
    weight = as_tensor(weight)
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be HxWxC or NxHxWxC, got shape {x.shape}")
    if weight.ndim != 4 or weight.shape[0] != weight.shape[1]:
        raise ValueError(f"conv2d weight must be k x k x Cin x Cout, got shape {weight.shape}")
    k, _, cin, cout = weight.shape
    if k % 2 == 0:
        raise ValueError(f"conv2d kernel size must be odd, got {k}")
    if x.shape[3] != cin:
        raise ValueError(f"conv2d input channels {x.shape[3]} do not match weight input channels {cin}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d stride must be 1 or 2, got {stride}")
    if padding is None:
        padding = (k - 1) // 2
    if not 0 <= padding <= k - 1:
        raise ValueError(f"conv2d padding must lie in [0, {k - 1}], got {padding}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ValueError(f"conv2d bias must have shape ({cout},), got {bias.shape}")

    n, h, w, _ = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d output would be empty for spatial size {h}x{w}")
    p = padding
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0))) if p else np.ascontiguousarray(x.data)
    wm = weight.data.reshape(k * k * cin, cout)
    cols = None
    if k == 1 and stride == 1:
        out = (xp.reshape(-1, cin) @ wm).reshape(n, ho, wo, cout)
    elif stride == 1:
        out = _valid_corr(xp, weight.data)
    else:
        cols = _im2col(xp, k, stride, ho, wo)
        out = (cols @ wm).reshape(n, ho, wo, cout)
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gx = gw = gb = None
        if weight.requires_grad:
            if k == 1 and stride == 1:
                gw = (xp.reshape(-1, cin).T @ g.reshape(-1, cout)).reshape(weight.shape)
            elif stride == 1:
                gw = _valid_corr_weight_grad(xp, g, k)
            else:
                gw = (cols.T @ g.reshape(-1, cout)).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 1, 2))
        if x.requires_grad:
            if stride == 1:
                # correlation of the padded output gradient with the flipped kernel
                flipped = np.ascontiguousarray(weight.data[::-1, ::-1].transpose(0, 1, 3, 2))
                q = k - 1 - p
                gp = np.pad(g, ((0, 0), (q, q), (q, q), (0, 0))) if q else g
                gx = _valid_corr(gp, flipped) if k > 1 else (gp.reshape(-1, cout) @ flipped[0, 0]).reshape(x.shape)
            else:
                gcols = (g.reshape(-1, cout) @ wm.T).reshape(n, ho, wo, k, k, cin)
                gxp = np.zeros_like(xp)
                for i in range(k):
                    for j in range(k):
                        gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, :, i, j]
                gx = gxp[:, p : p + h, p : p + w] if p else gxp
        if "conv2d" in FAULTS:
            gx = None if gx is None else -gx
            gw = None if gw is None else -gw
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    res = make_result(out, parents, bw, "conv2d")
    return reshape(res, res.shape[1:]) if squeeze else res


# --- resampling ------------------------------------------------------------

def bilinear_resample(x, coords) -> Tensor:
    """Sample ``x`` (N x H x W x C) at continuous (x, y) pixel coordinates.

    ``coords`` is N x H' x W' x 2. Coordinates past the border are clamped
    to it, so their gradient with respect to the coordinate is zero.
    """
    x = as_tensor(x)
    coords = as_tensor(coords)
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
        coords = reshape(coords, (1,) + coords.shape)
    n, h, w, c = x.shape
    if coords.ndim != 4 or coords.shape[0] != n or coords.shape[3] != 2:
        raise ValueError(f"coords must be N x H' x W' x 2 matching input batch {n}, got {coords.shape}")
    _, ho, wo, _ = coords.shape
    cx = coords.data[..., 0]
    cy = coords.data[..., 1]
    px = np.clip(cx, 0, w - 1)
    py = np.clip(cy, 0, h - 1)
    x0 = np.minimum(np.floor(px), max(w - 2, 0)).astype(np.intp)
    y0 = np.minimum(np.floor(py), max(h - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (px - x0).astype(x.dtype)[..., None]
    fy = (py - y0).astype(x.dtype)[..., None]
    b = np.arange(n)[:, None, None]
    v00 = x.data[b, y0, x0]
    v01 = x.data[b, y0, x1]
    v10 = x.data[b, y1, x0]
    v11 = x.data[b, y1, x1]
    # weighted form is exact at integer coordinates
    top = (1 - fx) * v00 + fx * v01
    bot = (1 - fx) * v10 + fx * v11
    out = (1 - fy) * top + fy * bot

    def bw(g):
        gx = gc = None
        if x.requires_grad:
            base = (b * h * w).astype(np.intp)
            rows = np.concatenate([
                (base + y0 * w + x0).ravel(), (base + y0 * w + x1).ravel(),
                (base + y1 * w + x0).ravel(), (base + y1 * w + x1).ravel(),
            ])
            a = fx[..., 0]
            bb = fy[..., 0]
            vals = np.concatenate([
                ((1 - a) * (1 - bb)).ravel(), (a * (1 - bb)).ravel(),
                ((1 - a) * bb).ravel(), (a * bb).ravel(),
            ])
            m = n * ho * wo
            cols = np.tile(np.arange(m), 4)
            scatter = sp.csr_matrix((vals, (rows, cols)), shape=(n * h * w, m))
            gx = np.asarray(scatter @ g.reshape(m, c)).reshape(x.shape).astype(x.dtype)
        if coords.requires_grad:
            dx = (1 - fy) * (v01 - v00) + fy * (v11 - v10)
            dy = bot - top
            inx = ((cx >= 0) & (cx <= w - 1) & (w > 1)).astype(x.dtype)
            iny = ((cy >= 0) & (cy <= h - 1) & (h > 1)).astype(x.dtype)
            gc = np.stack([(g * dx).sum(-1) * inx, (g * dy).sum(-1) * iny], axis=-1).astype(coords.dtype)
        return gx, gc

    res = make_result(out, (x, coords), bw, "bilinear_resample")
    return reshape(res, res.shape[1:]) if squeeze else res


def pixel_grid(h: int, w: int, dtype=np.float32) -> np.ndarray:
    """H x W x 2 array of (x, y) pixel centres."""
    ys, xs = np.meshgrid(np.arange(h, dtype=dtype), np.arange(w, dtype=dtype), indexing="ij")
    return np.stack([xs, ys], axis=-1)
