"""Task-weighting strategies.

Every strategy maps the current :class:`GradientSet` (plus, for the bandit
family, the player's state) to per-task effective weights; the trainer then
steps along ``-sum_t w_t g_t``. All strategies share the call signature
``strategy(evals, player, cfg) -> (StrategyOutput, player)`` so the registry
can treat them uniformly; stateless ones pass the player through untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    EmtlConfig,
    InvalidInputError,
    _frozen,
    effective_weights,
    relative_rates,
    uniform_weights,
)
from .minnorm import minnorm_fw
from .mirror import PlayerState, player_init, player_step

IMTL_NEG_TOL = 1e-10
IMTL_COND_MAX = 1e12


@dataclass(frozen=True)
class StrategyOutput:
    alpha: np.ndarray
    p: np.ndarray
    effective_weights: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def direction(self, grads):
        return self.effective_weights @ grads


def _check(evals):
    if evals.num_tasks < 2:
        raise InvalidInputError("need at least two tasks")


def mgda_alpha(evals, cfg=None):
    cfg = cfg or EmtlConfig()
    return minnorm_fw(evals.grads, cfg.fw_max_iter, cfg.fw_tol)


def linear_scalarization(evals, player=None, cfg=None):
    _check(evals)
    u = uniform_weights(evals.num_tasks)
    out = StrategyOutput(u, u, u, {})
    return out, player


def mgda_step(evals, player=None, cfg=None):
    """Min-norm weights, scaled by ``1/T`` like every other strategy here."""
    _check(evals)
    sol = mgda_alpha(evals, cfg)
    t = evals.num_tasks
    w = (1.0 / t) * sol.alpha
    diag = {
        "minnorm_residual": float(np.sqrt(sol.squared_norm)),
        "fw_iterations": float(sol.iterations_used),
    }
    return StrategyOutput(sol.alpha, uniform_weights(t), _frozen(w), diag), player


def imtl_g_step(evals, player=None, cfg=None):
    """Weights giving the aggregate equal projections on every unit gradient.

    Solves for ``w_2..w_T`` with ``w_1 = 1 - sum(w_2..w_T)``. A singular or
    ill-conditioned system, or a gradient below the norm floor, falls back to
    uniform weights and sets ``diagnostics["fallback"] = 1``. Weights below
    ``-1e-10`` raise instead of silently flipping gradient signs.
    """
    _check(evals)
    floor = (cfg or EmtlConfig()).grad_norm_floor
    t = evals.num_tasks
    u_all = uniform_weights(t)
    grads = evals.grads
    norms = evals.grad_norms()
    fallback = StrategyOutput(u_all, u_all, u_all, {"fallback": 1.0})
    if np.any(norms <= floor):
        return fallback, player
    units = grads / norms[:, None]
    diffs = grads[1:] - grads[0]          # (T-1, D): g_s - g_1
    proj = units[0] - units[1:]           # (T-1, D): u_1 - u_t
    a = proj @ diffs.T                    # a[t, s] = (g_s - g_1).(u_1 - u_t)
    b = -(proj @ grads[0])
    if not np.all(np.isfinite(a)) or np.linalg.cond(a) > IMTL_COND_MAX:
        return fallback, player
    try:
        tail = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        return fallback, player
    w = np.concatenate([[1.0 - tail.sum()], tail])
    if np.any(w < -IMTL_NEG_TOL):
        raise InvalidInputError(f"IMTL-G produced negative weights {w.tolist()}")
    w = np.maximum(w, 0.0)
    d = w @ grads
    projections = units @ d
    diag = {
        "fallback": 0.0,
        "projection_spread": float(projections.max() - projections.min()),
    }
    return StrategyOutput(u_all, u_all, _frozen(w), diag), player


def emtl_step(evals, player, cfg, gbm=mgda_alpha):
    """One step of the equitable weighting scheme.

    The gradient-balancing weights ``alpha`` come from ``gbm`` (the min-norm
    solver by default); the player then moves toward tasks with larger
    ``alpha_t L_t / |g_t|`` and the two weightings are mixed by ``epsilon``.
    """
    _check(evals)
    if player is None:
        player = player_init(evals.num_tasks)
    sol = gbm(evals, cfg)
    alpha = sol.alpha
    rates = relative_rates(evals, alpha, cfg.grad_norm_floor)
    new_player = player_step(player, rates.weighted, cfg.eta_p, cfg.rho)
    w = effective_weights(alpha, new_player.p, evals.grad_norms(), cfg.epsilon, cfg.grad_norm_floor)
    diag = {
        "variance": rates.variance,
        "lambda": new_player.lambda_last,
        "kl": new_player.kl_to_uniform,
        "minnorm_residual": float(np.sqrt(sol.squared_norm)),
    }
    return StrategyOutput(alpha, new_player.p, w, diag), new_player


def banditmtl_step(evals, player, cfg):
    """Loss-driven bandit weighting: the player sees raw losses.

    ``w_t = eps / T + (1 - eps) * p_t``, so a uniform player reproduces linear
    scalarisation. With ``cfg.bandit_loss_norm`` the losses are divided by
    their running mean before reaching the player.
    """
    _check(evals)
    t = evals.num_tasks
    if player is None:
        player = player_init(t)
    losses = evals.losses
    loss_mean, count = player.loss_mean, player.loss_count
    if cfg.bandit_loss_norm:
        count += 1
        loss_mean = losses.copy() if loss_mean is None else loss_mean + (losses - loss_mean) / count
        scaled = losses / np.maximum(np.abs(loss_mean), cfg.grad_norm_floor)
    else:
        scaled = losses
    new_player = player_step(player, scaled, cfg.eta_p, cfg.rho)
    new_player = PlayerState(
        p=new_player.p,
        lambda_last=new_player.lambda_last,
        kl_to_uniform=new_player.kl_to_uniform,
        loss_mean=None if loss_mean is None else _frozen(loss_mean),
        loss_count=count,
    )
    eps = cfg.epsilon
    w = (1.0 / t) * (eps + (1.0 - eps) * t * new_player.p)
    diag = {"lambda": new_player.lambda_last, "kl": new_player.kl_to_uniform}
    return StrategyOutput(uniform_weights(t), new_player.p, _frozen(w), diag), new_player


STRATEGIES = {
    "ls": linear_scalarization,
    "mgda": mgda_step,
    "imtl-g": imtl_g_step,
    "banditmtl": banditmtl_step,
    "emtl": emtl_step,
}


def get_strategy(name):
    try:
        return STRATEGIES[name]
    except KeyError:
        raise InvalidInputError(
            f"unknown method {name!r}; choose from {sorted(STRATEGIES)}"
        ) from None
