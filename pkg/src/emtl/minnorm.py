"""Minimum-norm point in the convex hull of task gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import InvalidInputError, _frozen

FW_MAX_ITER = 250
FW_TOL = 1e-9


@dataclass(frozen=True)
class MinNormSolution:
    alpha: np.ndarray
    combined: np.ndarray
    squared_norm: float
    iterations_used: int


def _solution(alpha, grads, iters):
    alpha = np.maximum(alpha, 0.0)
    alpha = alpha / alpha.sum()
    combined = alpha @ grads
    return MinNormSolution(
        alpha=_frozen(alpha),
        combined=_frozen(combined),
        squared_norm=float(combined @ combined),
        iterations_used=int(iters),
    )


def _stack(gradients):
    grads = np.asarray(gradients, dtype=np.float64)
    if grads.ndim != 2:
        raise InvalidInputError("gradients must stack into a (T, D) array")
    if not np.all(np.isfinite(grads)):
        raise InvalidInputError("gradients have non-finite entries")
    return grads


def line_gamma(g1, g2):
    """Weight on ``g1`` of the min-norm point on the segment [g1, g2]."""
    diff = g1 - g2
    denom = float(diff @ diff)
    if denom == 0.0:
        return 0.5
    gamma = float((g2 - g1) @ g2) / denom
    return min(max(gamma, 0.0), 1.0)


def minnorm_2(g1, g2):
    """Closed-form min-norm point between two vectors."""
    g1 = np.asarray(g1, dtype=np.float64).ravel()
    g2 = np.asarray(g2, dtype=np.float64).ravel()
    if g1.shape != g2.shape:
        raise InvalidInputError(f"dimension mismatch: {g1.shape} vs {g2.shape}")
    grads = _stack([g1, g2])
    gamma = line_gamma(g1, g2)
    alpha = np.array([gamma, 1.0 - gamma])
    combined = gamma * g1 + (1.0 - gamma) * g2
    return MinNormSolution(_frozen(alpha), _frozen(combined), float(combined @ combined), 0)


def minnorm_fw(gradients, max_iter=FW_MAX_ITER, tol=FW_TOL):
    """Frank-Wolfe search for the min-norm point of ``conv(gradients)``.

    Starts from uniform weights; each iteration moves toward the vertex with
    the smallest inner product with the current point, using the exact
    two-point line search. Stops once ``|d|^2 - min_t g_t.d <= tol``.
    Running out of iterations is not an error; the last iterate is returned
    with ``iterations_used == max_iter``.
    """
    grads = _stack(gradients)
    if grads.shape[0] < 2:
        raise InvalidInputError("need at least two gradients")
    if max_iter < 1 or tol <= 0:
        raise InvalidInputError("max_iter must be >= 1 and tol > 0")
    if not np.any(grads):
        return _solution(np.full(grads.shape[0], 1.0 / grads.shape[0]), grads, 0)
    gram = grads @ grads.T
    alpha, iters = _kernels.fw_gram(gram, int(max_iter), float(tol))
    return _solution(np.array(alpha), grads, iters)
