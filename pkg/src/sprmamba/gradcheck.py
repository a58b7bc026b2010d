"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_grad(fn: Callable[[], Tensor], target: np.ndarray, eps: float = 1e-5,
                   indices: Sequence[tuple] | None = None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. ``target`` (modified in place, then restored)."""
    grad = np.zeros_like(target)
    points = list(np.ndindex(target.shape)) if indices is None else indices
    for idx in points:
        orig = target[idx]
        target[idx] = orig + eps
        up = float(fn().data)
        target[idx] = orig - eps
        down = float(fn().data)
        target[idx] = orig
        grad[idx] = (up - down) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps entries whose true gradient is ~0 from dominating through
    finite-difference round-off.
    """
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], eps: float = 1e-5,
                    max_points: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Worst relative error between backprop and central differences over ``tensors``.

    With ``max_points`` only that many randomly chosen coordinates per tensor
    are probed.
    """
    for t in tensors:
        t.grad = None
    fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for t, a in zip(tensors, analytic):
        points = list(np.ndindex(t.shape))
        if max_points is not None and len(points) > max_points:
            points = [points[i] for i in rng.choice(len(points), size=max_points, replace=False)]
        numeric = numerical_grad(fn, t.data, eps, points)
        sel = tuple(np.array(points).T) if t.ndim else ()
        worst = max(worst, relative_error(a[sel], numeric[sel]))
    return worst
