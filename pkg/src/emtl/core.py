"""Value types and the per-step bookkeeping every strategy shares.

Vectors are plain float64 numpy arrays. The ``as_*`` helpers validate and
copy; the dataclasses below are frozen and hold read-only arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRAD_NORM_FLOOR = 1e-12
SIMPLEX_TOL = 1e-12


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


def _frozen(arr):
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def as_param_vector(values, name="theta"):
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size < 1:
        raise InvalidInputError(f"{name} must have at least one entry")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return _frozen(arr)


def as_weight_vector(weights, name="weights", tol=SIMPLEX_TOL):
    """Validate a point on the probability simplex."""
    arr = np.asarray(weights, dtype=np.float64).reshape(-1)
    if arr.size < 1 or not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} must be a finite non-empty vector")
    if np.any(arr < 0.0):
        raise InvalidInputError(f"{name} has negative entries")
    if abs(arr.sum() - 1.0) > tol:
        raise InvalidInputError(f"{name} sums to {arr.sum()!r}, not 1")
    return _frozen(arr)


def uniform_weights(num_tasks):
    return _frozen(np.full(num_tasks, 1.0 / num_tasks))


@dataclass(frozen=True)
class TaskEvaluation:
    loss: float
    gradient: np.ndarray


@dataclass(frozen=True)
class GradientSet:
    """Losses and shared-parameter gradients of all tasks at one step.

    ``grads`` is stacked row-wise, shape ``(T, D)``.
    """

    losses: np.ndarray
    grads: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        losses = np.asarray(self.losses, dtype=np.float64).reshape(-1)
        grads = np.asarray(self.grads, dtype=np.float64)
        if grads.ndim != 2 or grads.shape[0] != losses.size:
            raise InvalidInputError(
                f"expected grads of shape (T, D) with T={losses.size}, got {grads.shape}"
            )
        if losses.size < 2:
            raise InvalidInputError("multi-task problems need at least two tasks")
        if grads.shape[1] < 1:
            raise InvalidInputError("gradients must have dimension >= 1")
        if not (np.all(np.isfinite(losses)) and np.all(np.isfinite(grads))):
            raise InvalidInputError("losses and gradients must be finite")
        if self.step_index < 0:
            raise InvalidInputError("step_index must be nonnegative")
        object.__setattr__(self, "losses", _frozen(losses))
        object.__setattr__(self, "grads", _frozen(grads))

    @property
    def num_tasks(self):
        return self.losses.size

    @property
    def dim(self):
        return self.grads.shape[1]

    @property
    def per_task(self):
        return [TaskEvaluation(float(l), g) for l, g in zip(self.losses, self.grads)]

    def grad_norms(self):
        return np.sqrt(np.einsum("td,td->t", self.grads, self.grads))


@dataclass(frozen=True)
class RelativeRates:
    raw: np.ndarray
    weighted: np.ndarray
    variance: float


@dataclass(frozen=True)
class EmtlConfig:
    """Hyperparameters of one optimisation run.

    ``rho`` bounds the player's KL budget (the constraint uses ``sqrt(rho)``),
    ``eta_p`` is the player's step size and ``epsilon`` mixes the gradient
    balancing weights with the player-weighted relative-rate term.
    """

    rho: float = 0.5
    eta_p: float = 0.5
    epsilon: float = 0.5
    lr: float = 1e-2
    steps: int = 2000
    grad_norm_floor: float = GRAD_NORM_FLOOR
    fw_max_iter: int = 250
    fw_tol: float = 1e-9
    bandit_loss_norm: bool = False

    def __post_init__(self):
        checks = [
            (self.rho > 0, "rho must be > 0"),
            (self.eta_p >= 0, "eta_p must be >= 0"),
            (0.0 <= self.epsilon <= 1.0, "epsilon must lie in [0, 1]"),
            (self.lr > 0, "lr must be > 0"),
            (int(self.steps) == self.steps and self.steps >= 0, "steps must be a nonnegative integer"),
            (self.grad_norm_floor > 0, "grad_norm_floor must be > 0"),
            (int(self.fw_max_iter) == self.fw_max_iter and self.fw_max_iter >= 1, "fw_max_iter must be a positive integer"),
            (self.fw_tol > 0, "fw_tol must be > 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InvalidInputError(msg)
        for name in ("rho", "eta_p", "epsilon", "lr", "grad_norm_floor", "fw_tol"):
            if not np.isfinite(getattr(self, name)):
                raise InvalidInputError(f"{name} must be finite")


@dataclass(frozen=True)
class TrajectoryRecord:
    step: int
    theta: np.ndarray
    losses: np.ndarray
    alpha: np.ndarray
    p: np.ndarray
    effective_weights: np.ndarray
    relative_rates: RelativeRates
    objective_diagnostic: float
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def avg_loss(self):
        return float(np.mean(self.losses))


def gradient_norm(g):
    """Euclidean norm of a gradient vector."""
    arr = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("gradient has non-finite entries")
    return float(np.sqrt(np.dot(arr.ravel(), arr.ravel())))


def rate_spread(values):
    """Population standard deviation, the dispersion measure used for rates."""
    v = np.asarray(values, dtype=np.float64)
    dev = v - v.mean()
    return float(np.sqrt(np.mean(dev * dev)))


def relative_rates(evals, alpha, floor=GRAD_NORM_FLOOR):
    """Loss per unit of gradient norm for each task, raw and alpha-weighted.

    The denominator is clamped at ``floor`` so a task with a vanishing gradient
    gets a large but finite rate.
    """
    if floor <= 0:
        raise InvalidInputError("floor must be > 0")
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (evals.num_tasks,):
        raise InvalidInputError("alpha length does not match the number of tasks")
    norms = np.maximum(evals.grad_norms(), floor)
    raw = evals.losses / norms
    weighted = alpha * raw
    return RelativeRates(_frozen(raw), _frozen(weighted), rate_spread(weighted))


def effective_weights(alpha, p, grad_norms, epsilon, floor=GRAD_NORM_FLOOR):
    """Per-task coefficients of the merged update direction.

    ``w_t = (eps * a_t + (1 - eps) * p_t * a_t / |g_t|) / T``; alpha, p and the
    norms are constants of the step.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidInputError("epsilon must lie in [0, 1]")
    alpha = np.asarray(alpha, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    norms = np.maximum(np.asarray(grad_norms, dtype=np.float64), floor)
    if not (alpha.shape == p.shape == norms.shape):
        raise InvalidInputError("alpha, p and grad_norms must share a length")
    t = alpha.size
    return _frozen((1.0 / t) * (epsilon * alpha + (1.0 - epsilon) * (p * alpha / norms)))


def variance_objective(losses, raw_rates, rho):
    """Mean loss plus ``rho`` times the spread of the raw relative rates.

    Reported as a diagnostic only; nothing optimises it directly.
    """
    return float(np.mean(losses)) + rho * rate_spread(raw_rates)
