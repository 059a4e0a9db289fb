from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


@dataclass
class ModelState:
    """Named parameters plus Adam moments and the step counter."""

    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def tensors(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: Tensor(a, requires_grad=requires_grad) for k, a in self.params.items()}

    def astype(self, dtype) -> "ModelState":
        cast = lambda d: {k: a.astype(dtype) for k, a in d.items()}
        return ModelState(cast(self.params), cast(self.m), cast(self.v), self.step)

    def copy(self) -> "ModelState":
        return self.astype(next(iter(self.params.values())).dtype) if self.params else ModelState({})


def adam_step(
    state: ModelState,
    grads: Mapping[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    only: set[str] | None = None,
) -> ModelState:
    """One bias-corrected Adam update, in place. Missing gradients count as zero.

    ``only`` restricts the update to a subset of parameter names; the rest
    keep both their values and their moments.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in state.params.items():
        if only is not None and name not in only:
            continue
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            v = state.v[name] = np.zeros_like(p)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state
