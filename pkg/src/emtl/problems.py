"""Synthetic multi-task problems with analytic gradients.

``quad2``
    Two anisotropic quadratics in the plane with a per-task scale knob. The
    default scales ``(1, 100)`` make the second loss two orders of magnitude
    larger than the first.
``synthreg``
    Linear multi-task regression through a shared linear map ``W`` (the
    parameters) and fixed per-task readouts, with a seeded train/held-out
    split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import GradientSet, InvalidInputError, _frozen, as_param_vector

QUAD2_CENTERS = np.array([[-2.0, 0.0], [2.0, 0.0]])
QUAD2_CURVATURES = np.array([[[1.0, 0.0], [0.0, 4.0]], [[4.0, 0.0], [0.0, 1.0]]])
QUAD2_INITS = ((-3.0, -3.0), (-3.0, 3.0), (3.0, -3.0), (3.0, 3.0), (0.0, 3.0))
QUAD2_DEFAULT_SCALE = (1.0, 100.0)


@dataclass(frozen=True)
class Batch:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.x.shape[0]


@dataclass(frozen=True)
class SynthData:
    readouts: np.ndarray      # (T, hidden)
    w_true: np.ndarray        # (hidden, d_in)
    train: Batch
    heldout: Batch | None


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    dim: int
    num_tasks: int
    scale_factors: tuple
    init_points: tuple
    pareto_reference: np.ndarray | None = None
    data: SynthData | None = field(default=None, repr=False)
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.scale_factors) != self.num_tasks:
            raise InvalidInputError("scale_factors must have one entry per task")
        if any(not (s > 0 and np.isfinite(s)) for s in self.scale_factors):
            raise InvalidInputError("scale_factors must be positive and finite")
        if not self.init_points:
            raise InvalidInputError("a problem needs at least one init point")
        if self.num_tasks < 2:
            raise InvalidInputError("num_tasks must be >= 2")


# ---------------------------------------------------------------------------
# quad2
# ---------------------------------------------------------------------------

def quad2_reference(scale):
    """Closed-form minimiser of the uniform average of the scaled quadratics."""
    s = np.asarray(scale, dtype=np.float64)
    lhs = np.einsum("t,tij->ij", s, QUAD2_CURVATURES)
    rhs = np.einsum("t,tij,tj->i", s, QUAD2_CURVATURES, QUAD2_CENTERS)
    return np.linalg.solve(lhs, rhs)


def make_quad2(scale_factors=QUAD2_DEFAULT_SCALE, init_points=QUAD2_INITS):
    scale = tuple(float(s) for s in scale_factors)
    if len(scale) != 2:
        raise InvalidInputError("quad2 has exactly two tasks")
    inits = tuple(as_param_vector(p) for p in init_points)
    if any(p.size != 2 for p in inits):
        raise InvalidInputError("quad2 init points are 2-dimensional")
    return ProblemSpec(
        name="quad2",
        dim=2,
        num_tasks=2,
        scale_factors=scale,
        init_points=inits,
        pareto_reference=_frozen(quad2_reference(scale)),
    )


def _quad2_parts(theta, spec):
    if spec.name != "quad2" or spec.dim != 2 or spec.num_tasks != 2:
        raise InvalidInputError(f"quad2_eval called with problem {spec.name!r}")
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (2,):
        raise InvalidInputError("quad2 expects a 2-vector")
    s = np.asarray(spec.scale_factors)
    diff = theta[None, :] - QUAD2_CENTERS                        # (2, 2)
    a_diff = np.einsum("tij,tj->ti", QUAD2_CURVATURES, diff)     # A_t (theta - a_t)
    # divergent runs overflow here; GradientSet rejects the non-finite result
    with np.errstate(over="ignore", invalid="ignore"):
        losses = 0.5 * s * np.einsum("ti,ti->t", diff, a_diff)
        grads = s[:, None] * a_diff
    return losses, grads


def quad2_eval(theta, spec, step_index=0):
    losses, grads = _quad2_parts(theta, spec)
    return GradientSet(losses, grads, step_index)


# ---------------------------------------------------------------------------
# synthreg
# ---------------------------------------------------------------------------

def _draw_batch(rng, n, w_true, readouts, scale, noise):
    x = rng.standard_normal((n, w_true.shape[1]))
    clean = x @ w_true.T @ readouts.T                            # (n, T)
    y = scale[None, :] * (clean + noise * rng.standard_normal(clean.shape))
    return Batch(_frozen(x), _frozen(y))


def make_synthreg(
    num_tasks=3,
    d_in=8,
    hidden=1,
    n_train=256,
    n_heldout=256,
    noise=0.1,
    scale_factors=None,
    seed=0,
    heldout="split",
    num_inits=5,
    init_scale=0.5,
):
    """Build a seeded multi-task regression problem.

    ``heldout`` is ``"split"`` (independent sample from the same
    distribution), ``"same"`` (the training sample reused) or ``"none"``.
    """
    if num_tasks < 2 or d_in < 1 or hidden < 1 or n_train < 1:
        raise InvalidInputError("synthreg sizes must be positive with num_tasks >= 2")
    if heldout not in ("split", "same", "none"):
        raise InvalidInputError(f"unknown heldout mode {heldout!r}")
    scale = np.ones(num_tasks) if scale_factors is None else np.asarray(scale_factors, dtype=np.float64)
    if scale.shape != (num_tasks,):
        raise InvalidInputError("scale_factors must have one entry per task")
    rng = np.random.default_rng(seed)
    readouts = rng.standard_normal((num_tasks, hidden))
    w_true = rng.standard_normal((hidden, d_in)) / np.sqrt(d_in)
    train = _draw_batch(rng, n_train, w_true, readouts, scale, noise)
    if heldout == "split":
        held = _draw_batch(rng, n_heldout, w_true, readouts, scale, noise)
    elif heldout == "same":
        held = train
    else:
        held = None
    inits = tuple(
        as_param_vector(init_scale * rng.standard_normal(hidden * d_in)) for _ in range(num_inits)
    )
    data = SynthData(_frozen(readouts), _frozen(w_true), train, held)
    spec = ProblemSpec(
        name="synthreg",
        dim=hidden * d_in,
        num_tasks=num_tasks,
        scale_factors=tuple(float(s) for s in scale),
        init_points=inits,
        data=data,
        options={
            "d_in": d_in, "hidden": hidden, "n_train": n_train, "n_heldout": n_heldout,
            "noise": noise, "seed": seed, "heldout": heldout,
        },
    )
    ref = _synthreg_reference(spec)
    return ProblemSpec(**{**spec.__dict__, "pareto_reference": _frozen(ref)})


def _synthreg_design(spec, batch):
    # prediction_t(x) = c_t * r_t^T W x = c_t * kron(r_t, x) . vec(W)
    data = spec.data
    scale = np.asarray(spec.scale_factors)
    rows = [
        scale[t] * np.einsum("h,nd->nhd", data.readouts[t], batch.x).reshape(len(batch), -1)
        for t in range(spec.num_tasks)
    ]
    return np.vstack(rows), batch.y.T.reshape(-1)


def _synthreg_reference(spec):
    design, target = _synthreg_design(spec, spec.data.train)
    sol, *_ = np.linalg.lstsq(design, target, rcond=None)
    return sol


def _synthreg_parts(theta, spec, batch):
    if spec.name != "synthreg" or spec.data is None:
        raise InvalidInputError(f"synth_regression_eval called with problem {spec.name!r}")
    if batch is None:
        batch = spec.data.train
    if len(batch) == 0:
        raise InvalidInputError("empty batch")
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (spec.dim,):
        raise InvalidInputError(f"synthreg expects a {spec.dim}-vector")
    hidden = spec.options["hidden"]
    w = theta.reshape(hidden, -1)
    readouts = spec.data.readouts
    scale = np.asarray(spec.scale_factors)
    n = len(batch)
    pred = scale[None, :] * (batch.x @ w.T @ readouts.T)        # (n, T)
    resid = pred - batch.y
    losses = np.mean(resid * resid, axis=0)
    # dL_t/dW = (2 c_t / n) r_t (X^T e_t)^T
    xt_e = batch.x.T @ resid                                   # (d_in, T)
    grads = (2.0 / n) * scale[:, None, None] * readouts[:, :, None] * xt_e.T[:, None, :]
    return losses, grads.reshape(spec.num_tasks, -1)


def synth_regression_eval(theta, spec, batch=None, step_index=0):
    losses, grads = _synthreg_parts(theta, spec, batch)
    return GradientSet(losses, grads, step_index)


# ---------------------------------------------------------------------------
# dispatch and the finite-difference oracle
# ---------------------------------------------------------------------------

def evaluate(theta, spec, batch=None, step_index=0):
    if spec.name == "quad2":
        return quad2_eval(theta, spec, step_index)
    if spec.name == "synthreg":
        return synth_regression_eval(theta, spec, batch, step_index)
    raise InvalidInputError(f"unknown problem {spec.name!r}")


def task_losses(theta, spec, batch=None):
    if spec.name == "quad2":
        return _quad2_parts(theta, spec)[0]
    if spec.name == "synthreg":
        return _synthreg_parts(theta, spec, batch)[0]
    raise InvalidInputError(f"unknown problem {spec.name!r}")


def fd_gradient(theta, loss_index, spec, h=1e-5, batch=None):
    """Central-difference gradient of one task's loss."""
    if h <= 0:
        raise InvalidInputError("h must be > 0")
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = h
        up = task_losses(theta + step, spec, batch)[loss_index]
        down = task_losses(theta - step, spec, batch)[loss_index]
        out[i] = (up - down) / (2.0 * h)
    return out


PROBLEMS = {"quad2": make_quad2, "synthreg": make_synthreg}


def build_problem(name, **kwargs):
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise InvalidInputError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return factory(**kwargs)
