from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward, gradients


class GradCheckError(RuntimeError):
    def __init__(self, message: str, index=None):
        super().__init__(message)
        self.index = index


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic))


def grad_check(
    f: Callable[[Tensor], Tensor],
    point: np.ndarray,
    h: float = 1e-5,
    coords: list[tuple[int, ...]] | None = None,
) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``f`` maps a tensor to a scalar tensor. ``coords`` limits the check to a
    subset of indices; by default every coordinate is probed.
    """
    point = np.array(point, dtype=np.float64)
    x = Tensor(point.copy(), requires_grad=True)
    y = f(x)
    if not np.isfinite(y.data).all():
        raise GradCheckError("non-finite value at the base point", index=None)
    backward(y)
    analytic = x.grad if x.grad is not None else np.zeros_like(point)
    if coords is None:
        coords = list(np.ndindex(point.shape))
    worst = 0.0
    for idx in coords:
        numeric = _central(lambda p: f(Tensor(p)).data, point, idx, h)
        worst = max(worst, _rel_err(float(analytic[idx]), numeric))
    return worst


def _central(evaluate, point: np.ndarray, idx, h: float) -> float:
    plus = point.copy()
    minus = point.copy()
    plus[idx] += h
    minus[idx] -= h
    fp = float(evaluate(plus))
    fm = float(evaluate(minus))
    if not (np.isfinite(fp) and np.isfinite(fm)):
        raise GradCheckError(f"non-finite value near coordinate {idx}", index=idx)
    return (fp - fm) / (2 * h)


def grad_check_params(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    h: float = 1e-5,
    per_param: int | None = 4,
    rng: np.random.Generator | None = None,
) -> tuple[float, str]:
    """Finite-difference check of a loss over a dict of named parameters.

    Samples up to ``per_param`` coordinates of every parameter (all of them
    if None). Returns the worst relative error and where it occurred.
    """
    rng = rng or np.random.default_rng(0)
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in base.items()}
    loss = f(tensors)
    if not np.isfinite(loss.data).all():
        raise GradCheckError("non-finite loss at the base point")
    analytic = gradients(loss, tensors)

    worst, where = 0.0, ""
    for name, value in base.items():
        if per_param is None or value.size <= per_param:
            picks = list(np.ndindex(value.shape))
        else:
            flat = rng.choice(value.size, size=per_param, replace=False)
            picks = [np.unravel_index(i, value.shape) for i in flat]

        def evaluate(p, name=name):
            trial = {k: Tensor(v) for k, v in base.items()}
            trial[name] = Tensor(p)
            return f(trial).data

        for idx in picks:
            numeric = _central(evaluate, value, idx, h)
            err = _rel_err(float(analytic[name][idx]), numeric)
            if err > worst:
                worst, where = err, f"{name}{list(map(int, idx))}"
    return worst, where
