"""Exponentiated-gradient player over the KL ball around uniform weights."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import InvalidInputError, _frozen


@dataclass(frozen=True)
class PlayerState:
    p: np.ndarray
    lambda_last: float = 0.0
    kl_to_uniform: float = 0.0
    # running mean of raw losses, only used by the loss-normalised bandit variant
    loss_mean: np.ndarray | None = None
    loss_count: int = 0

    @property
    def num_tasks(self):
        return self.p.size


def kl_to_uniform(p):
    """``sum_t p_t log(T p_t)``, with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    return _kernels.kl_uniform_numpy(p)


def player_init(num_tasks):
    if int(num_tasks) != num_tasks or num_tasks < 2:
        raise InvalidInputError("the player needs at least two tasks")
    return PlayerState(p=_frozen(np.full(int(num_tasks), 1.0 / num_tasks)))


def damped_update(p, rates, eta_p, lam):
    """The exponentiated-gradient update for a fixed damping ``lam``.

    Exposed for testing the monotone behaviour of the KL in ``lam``.
    """
    base = np.log(np.maximum(np.asarray(p, dtype=np.float64), _kernels.PROB_FLOOR))
    base = base + eta_p * np.asarray(rates, dtype=np.float64)
    return _kernels._softmax_damped_numpy(base, lam)


def player_step(state, rates, eta_p, rho):
    """Move the player's weights toward tasks with larger ``rates``.

    ``p'_t`` is proportional to ``exp((log p_t + eta_p * r_t) / (1 + lam))``
    where ``lam >= 0`` is the smallest damping that keeps the KL divergence
    from uniform at most ``sqrt(rho)``. ``lam`` is found by doubling then
    bisection.
    """
    rates = np.asarray(rates, dtype=np.float64).ravel()
    if rates.shape != state.p.shape:
        raise InvalidInputError("rates length does not match the player's weights")
    if not np.all(np.isfinite(rates)):
        raise InvalidInputError("rates must be finite")
    if eta_p < 0 or not math.isfinite(eta_p):
        raise InvalidInputError("eta_p must be finite and >= 0")
    if rho <= 0 or not math.isfinite(rho):
        raise InvalidInputError("rho must be finite and > 0")
    p_new, lam = _kernels.player_update(
        np.ascontiguousarray(state.p), rates, float(eta_p), math.sqrt(rho)
    )
    p_new = np.array(p_new)
    return PlayerState(
        p=_frozen(p_new),
        lambda_last=float(lam),
        kl_to_uniform=kl_to_uniform(p_new),
        loss_mean=state.loss_mean,
        loss_count=state.loss_count,
    )
