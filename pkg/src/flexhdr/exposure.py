"""Per-image exposure confidence with learned knees alpha < 0.5 < beta."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import Tensor, add, as_tensor, concat, conv2d, make_result, mul, sigmoid, spatial_mean

FIXED_ALPHA = 1.0 / 3.0
FIXED_BETA = 2.0 / 3.0


@dataclass
class ExposureParams:
    alpha: Tensor   # N x 1 x 1 x 1
    beta: Tensor


def squash(logits: Tensor) -> ExposureParams:
    """Map two raw logits per image to 0 < alpha < 0.5 < beta < 1."""
    alpha = mul(sigmoid(logits[..., 0:1]), 0.5)
    beta = add(mul(sigmoid(logits[..., 1:2]), 0.5), 0.5)
    return ExposureParams(alpha, beta)


def predict_exposure_params(x, mean_image, weight, bias) -> ExposureParams:
    """One conv over [X_i, mean image] -> 2 channels, spatial average, squashing."""
    inp = concat([as_tensor(x), as_tensor(mean_image)], axis=-1)
    logits = spatial_mean(conv2d(inp, weight, bias))
    return squash(logits)


def fixed_params(n: int, dtype=np.float32) -> ExposureParams:
    shape = (n, 1, 1, 1)
    return ExposureParams(
        Tensor(np.full(shape, FIXED_ALPHA, dtype=dtype)),
        Tensor(np.full(shape, FIXED_BETA, dtype=dtype)),
    )


def confidence_np(mean_image: np.ndarray, alpha, beta) -> np.ndarray:
    m = np.asarray(mean_image)
    alpha = np.asarray(alpha, dtype=m.dtype)
    beta = np.asarray(beta, dtype=m.dtype)
    low = m < alpha
    high = m > beta
    # inner np.where keeps both branches finite before selection
    return np.where(low, m / alpha, np.where(high, (1.0 - m) / (1.0 - beta), 1.0)).astype(m.dtype)


def exposure_confidence(mean_image, p: ExposureParams) -> Tensor:
    """Piecewise-linear confidence: rises to 1 at alpha, flat to beta, falls to 0 at 1."""
    m = as_tensor(mean_image).data
    a, b = as_tensor(p.alpha), as_tensor(p.beta)
    low = m < a.data
    high = m > b.data
    out = confidence_np(m, a.data, b.data)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            d = np.where(low, -m / (a.data * a.data), 0.0)
            ga = _reduce_to(g * d, a.shape)
        if b.requires_grad:
            d = np.where(high, (1.0 - m) / ((1.0 - b.data) ** 2), 0.0)
            gb = _reduce_to(g * d, b.shape)
        return ga, gb

    return make_result(out, (a, b), bw, "exposure_confidence")


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True).astype(g.dtype) if axes else g
