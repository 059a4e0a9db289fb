from __future__ import annotations

from typing import Mapping

import numpy as np

from .numerics import Tensor, conv2d


def conv(params: Mapping[str, Tensor], name: str, x, stride: int = 1) -> Tensor:
    return conv2d(x, params[name + ".w"], params[name + ".b"], stride=stride)


def init_conv(
    params: dict[str, np.ndarray],
    name: str,
    k: int,
    cin: int,
    cout: int,
    rng: np.random.Generator,
    zero: bool = False,
    bias: float | None = None,
) -> None:
    """Uniform(+-sqrt(1 / (k*k*cin))) weights and biases, or all zeros.

    ``bias`` replaces the random bias with a constant.
    """
    if zero:
        params[name + ".w"] = np.zeros((k, k, cin, cout), dtype=np.float32)
        params[name + ".b"] = np.zeros((cout,), dtype=np.float32)
        return
    bound = np.sqrt(1.0 / (k * k * cin))
    params[name + ".w"] = rng.uniform(-bound, bound, (k, k, cin, cout)).astype(np.float32)
    b = rng.uniform(-bound, bound, (cout,))
    params[name + ".b"] = (b if bias is None else np.full(cout, bias)).astype(np.float32)
