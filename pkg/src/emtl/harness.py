"""Training loop, trajectory files, experiment grids and the generalisation diagnostic."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    EmtlConfig,
    InvalidInputError,
    RelativeRates,
    TrajectoryRecord,
    _frozen,
    rate_spread,
    relative_rates,
    variance_objective,
)
from .mirror import player_init
from .problems import ProblemSpec, build_problem, evaluate, task_losses
from .weighting import STRATEGIES, get_strategy

log = logging.getLogger(__name__)

CONVERGED_NORM = 1e-8
LR_DECAY_FRACTION = 0.4
DEFAULT_RHOS = (0.1, 0.3, 0.5, 0.8, 1.0, 1.2)


class RunError(RuntimeError):
    """A strategy or problem failed mid-run; ``step`` is where it happened."""

    def __init__(self, step, message):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class RunConfig:
    problem: object = "quad2"
    method: str = "emtl"
    emtl: EmtlConfig = field(default_factory=EmtlConfig)
    seed: int = 0
    record_every: int = 1
    output_path: str | None = None
    init_index: int = 0
    lr_decay: bool = False

    def __post_init__(self):
        if self.method not in STRATEGIES:
            raise InvalidInputError(f"unknown method {self.method!r}; choose from {sorted(STRATEGIES)}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise InvalidInputError("record_every must be a positive integer")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")
        if int(self.init_index) != self.init_index or self.init_index < 0:
            raise InvalidInputError("init_index must be a nonnegative integer")


@dataclass
class RunResult:
    trajectory: list
    final_losses: np.ndarray
    final_avg_loss: float
    distance_to_reference: float
    converged: bool
    final_theta: np.ndarray
    best_step: int
    best_theta: np.ndarray
    best_metric: float
    config: RunConfig | None = None


@dataclass
class RunFailure:
    index: int
    step: int | None
    message: str
    config: RunConfig | None = None


def resolve_problem(problem, seed=0):
    """Turn a problem name, option dict or ready :class:`ProblemSpec` into a spec."""
    if isinstance(problem, ProblemSpec):
        return problem
    if isinstance(problem, str):
        problem = {"name": problem}
    if not isinstance(problem, dict) or "name" not in problem:
        raise InvalidInputError("problem must be a name, a dict with 'name', or a ProblemSpec")
    opts = dict(problem)
    name = opts.pop("name")
    if name == "synthreg":
        opts.setdefault("seed", seed)
    return build_problem(name, **opts)


def _metric(theta, spec, evals):
    # quad2: uniform-average loss; synthreg: held-out average when available
    if spec.name == "synthreg" and spec.data.heldout is not None:
        return float(np.mean(task_losses(theta, spec, spec.data.heldout)))
    return float(np.mean(evals.losses))


def _lr_at(cfg, k, decay):
    if not decay or cfg.steps == 0:
        return cfg.lr
    period = max(1, int(LR_DECAY_FRACTION * cfg.steps))
    return cfg.lr * 0.5 ** (k // period)


def run(config):
    """Optimise one problem from one init point with one strategy.

    Every step evaluates the tasks, asks the strategy for weights, records the
    snapshot and moves ``theta <- theta - lr * sum_t w_t g_t``. ``steps + 1``
    snapshots are produced (the last one is never applied), thinned by
    ``record_every`` but always keeping the first and last. The whole budget
    runs; the best snapshot by average loss is kept alongside the final one.
    """
    spec = resolve_problem(config.problem, config.seed)
    cfg = config.emtl
    if config.init_index >= len(spec.init_points):
        raise InvalidInputError(
            f"init_index {config.init_index} out of range for {len(spec.init_points)} init points"
        )
    strategy = get_strategy(config.method)
    theta = np.array(spec.init_points[config.init_index], dtype=np.float64)
    player = player_init(spec.num_tasks)
    records = []
    converged = False
    best_metric, best_step, best_theta = math.inf, 0, theta.copy()
    last = None

    for k in range(cfg.steps + 1):
        try:
            evals = evaluate(theta, spec, step_index=k)
            out, player = strategy(evals, player, cfg)
        except InvalidInputError as exc:
            raise RunError(k, str(exc)) from exc
        direction = out.effective_weights @ evals.grads
        rates = relative_rates(evals, out.alpha, cfg.grad_norm_floor)
        rec = TrajectoryRecord(
            step=k,
            theta=_frozen(theta),
            losses=evals.losses,
            alpha=out.alpha,
            p=out.p,
            effective_weights=out.effective_weights,
            relative_rates=rates,
            objective_diagnostic=variance_objective(evals.losses, rates.raw, cfg.rho),
            extras=dict(out.diagnostics),
        )
        last = rec
        if k % config.record_every == 0 or k == cfg.steps:
            records.append(rec)
        metric = _metric(theta, spec, evals)
        if metric < best_metric:
            best_metric, best_step, best_theta = metric, k, theta.copy()
        if k == cfg.steps:
            break
        if np.linalg.norm(direction) < CONVERGED_NORM:
            converged = True
        theta = theta - _lr_at(cfg, k, config.lr_decay) * direction
        if not np.all(np.isfinite(theta)):
            raise RunError(k, "parameters became non-finite")

    ref = spec.pareto_reference
    dist = float(np.linalg.norm(last.theta - ref)) if ref is not None else math.nan
    result = RunResult(
        trajectory=records,
        final_losses=last.losses,
        final_avg_loss=last.avg_loss,
        distance_to_reference=dist,
        converged=converged,
        final_theta=last.theta,
        best_step=best_step,
        best_theta=_frozen(best_theta),
        best_metric=best_metric,
        config=config,
    )
    if config.output_path:
        write_trajectory_csv(result.trajectory, trajectory_path(config.output_path))
    return result


def trajectory_path(output_path):
    path = Path(output_path)
    return path if path.suffix == ".csv" else path / "trajectory.csv"


# ---------------------------------------------------------------------------
# CSV trajectories
# ---------------------------------------------------------------------------

def csv_header(dim, num_tasks):
    cols = ["step"]
    cols += [f"theta_{i}" for i in range(dim)]
    for prefix in ("loss", "alpha", "p", "w", "rr"):
        cols += [f"{prefix}_{t + 1}" for t in range(num_tasks)]
    cols.append("variance")
    return cols


def _fmt(x):
    return format(float(x), ".17g")


def write_trajectory_csv(records, path):
    """One row per record; floats carry 17 significant digits so they round-trip."""
    if not records:
        raise InvalidInputError("no records to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    first = records[0]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(csv_header(first.theta.size, first.losses.size))
        for rec in records:
            row = [str(rec.step)]
            for arr in (rec.theta, rec.losses, rec.alpha, rec.p, rec.effective_weights, rec.relative_rates.raw):
                row += [_fmt(v) for v in arr]
            row.append(_fmt(rec.relative_rates.variance))
            writer.writerow(row)
    return path


def read_trajectory_csv(path, rho=EmtlConfig.rho):
    """Parse a trajectory file back into records.

    Weighted rates and the objective diagnostic are not stored; they are
    recomputed from the stored columns (``rho`` must match the run's).
    """
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = sum(1 for c in header if c.startswith("theta_"))
        num_tasks = sum(1 for c in header if c.startswith("loss_"))
        if header != csv_header(dim, num_tasks):
            raise InvalidInputError(f"unexpected trajectory header in {path}")
        records = []
        for row in reader:
            vals = np.array([float(v) for v in row[1:]])
            pos = 0

            def take(n):
                nonlocal pos
                chunk = vals[pos:pos + n]
                pos += n
                return _frozen(chunk)

            theta = take(dim)
            losses, alpha, p, w, raw = (take(num_tasks) for _ in range(5))
            variance = float(vals[pos])
            rates = RelativeRates(raw, _frozen(alpha * raw), variance)
            records.append(TrajectoryRecord(
                step=int(row[0]),
                theta=theta,
                losses=losses,
                alpha=alpha,
                p=p,
                effective_weights=w,
                relative_rates=rates,
                objective_diagnostic=variance_objective(losses, raw, rho),
            ))
    return records


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

def _run_slot(args):
    index, config = args
    try:
        return run(config)
    except RunError as exc:
        return RunFailure(index, exc.step, str(exc), config)
    except (InvalidInputError, FloatingPointError) as exc:
        return RunFailure(index, None, str(exc), config)


def run_grid(configs, parallelism=1):
    """Run independent configurations, optionally across processes.

    Results come back in input order. A failing run yields a
    :class:`RunFailure` in its slot; the others still run.
    """
    configs = list(configs)
    if not configs:
        raise InvalidInputError("run_grid needs at least one config")
    if int(parallelism) != parallelism or parallelism < 1:
        raise InvalidInputError("parallelism must be a positive integer")
    jobs = list(enumerate(configs))
    if parallelism == 1 or len(configs) == 1:
        return [_run_slot(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=int(parallelism)) as pool:
        return list(pool.map(_run_slot, jobs))


def result_summary(index, result):
    if isinstance(result, RunFailure):
        cfg = result.config
        return {
            "index": index,
            "method": cfg.method if cfg else None,
            "init_index": cfg.init_index if cfg else None,
            "error": result.message,
            "failed_step": result.step,
        }
    cfg = result.config
    spec_name = cfg.problem if isinstance(cfg.problem, str) else (
        cfg.problem.get("name") if isinstance(cfg.problem, dict) else cfg.problem.name
    )
    return {
        "index": index,
        "problem": spec_name,
        "method": cfg.method,
        "init_index": cfg.init_index,
        "seed": cfg.seed,
        "final_theta": result.final_theta.tolist(),
        "final_losses": result.final_losses.tolist(),
        "final_avg_loss": result.final_avg_loss,
        "distance_to_reference": result.distance_to_reference,
        "converged": result.converged,
        "best_step": result.best_step,
        "best_metric": result.best_metric,
        "trajectory_csv": str(trajectory_path(cfg.output_path)) if cfg.output_path else None,
        "error": None,
    }


def write_summary(results, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"runs": [result_summary(i, r) for i, r in enumerate(results)]}
    path.write_text(json.dumps(payload, indent=2, allow_nan=True))
    return path


def run_config_from_dict(d, base_dir=None):
    """Build a :class:`RunConfig` from a JSON object using its field names."""
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(d) - known
    if unknown:
        raise InvalidInputError(f"unknown RunConfig fields: {sorted(unknown)}")
    kw = dict(d)
    emtl = kw.get("emtl", {})
    if isinstance(emtl, dict):
        emtl_known = {f.name for f in dataclasses.fields(EmtlConfig)}
        bad = set(emtl) - emtl_known
        if bad:
            raise InvalidInputError(f"unknown EmtlConfig fields: {sorted(bad)}")
        kw["emtl"] = EmtlConfig(**emtl)
    out = kw.get("output_path")
    if out and base_dir is not None and not Path(out).is_absolute():
        kw["output_path"] = str(Path(base_dir) / out)
    return RunConfig(**kw)


# ---------------------------------------------------------------------------
# generalisation diagnostic
# ---------------------------------------------------------------------------

def _rates_on(theta, spec, batch, floor):
    evals = evaluate(theta, spec, batch=batch)
    return evals.losses / np.maximum(evals.grad_norms(), floor)


def _spearman(x, y):
    from scipy.stats import spearmanr

    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return math.nan
    return float(spearmanr(x, y).statistic)


def theorem1_diagnostic(spec, cfg, rhos=DEFAULT_RHOS, seeds=None):
    """Relate the training relative-rate spread to the train/held-out rate gap.

    For every seed and every ``rho`` the run is repeated; at the returned
    (best held-out) parameters the report holds the spread of the raw
    training rates, the mean held-out-minus-training rate gap, and Spearman
    correlations of the gap against ``rho`` and against the spread. It is a
    measurement, not a check of the bound.
    """
    spec = resolve_problem(spec, cfg.seed)
    if spec.name != "synthreg" or spec.data is None or spec.data.heldout is None:
        raise InvalidInputError("the diagnostic needs a synthreg problem with a held-out split")
    seeds = [spec.options["seed"]] if seeds is None else list(seeds)
    floor = cfg.emtl.grad_norm_floor
    rows = []
    for seed in seeds:
        seeded = spec if seed == spec.options["seed"] else build_problem(
            "synthreg", **{**spec.options, "seed": seed}
        )
        for rho in rhos:
            run_cfg = dataclasses.replace(
                cfg,
                problem=seeded,
                seed=seed,
                output_path=None,
                emtl=dataclasses.replace(cfg.emtl, rho=float(rho)),
            )
            result = run(run_cfg)
            theta = result.best_theta
            train = _rates_on(theta, seeded, seeded.data.train, floor)
            held = _rates_on(theta, seeded, seeded.data.heldout, floor)
            rows.append({
                "seed": int(seed),
                "rho": float(rho),
                "variance": rate_spread(train),
                "gap": float(np.mean(held - train)),
                "train_avg_loss": float(np.mean(task_losses(theta, seeded, seeded.data.train))),
                "heldout_avg_loss": float(np.mean(task_losses(theta, seeded, seeded.data.heldout))),
                "best_step": result.best_step,
            })
    rho_col = [r["rho"] for r in rows]
    var_col = [r["variance"] for r in rows]
    gap_col = [r["gap"] for r in rows]
    return {
        "method": cfg.method,
        "rhos": [float(r) for r in rhos],
        "seeds": [int(s) for s in seeds],
        "rows": rows,
        "spearman_rho_vs_gap": _spearman(rho_col, gap_col),
        "spearman_variance_vs_gap": _spearman(var_col, gap_col),
        "spearman_rho_vs_variance": _spearman(rho_col, var_col),
    }


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------

def write_loss_svg(results, path, title=None):
    """Scatter of (L_1, L_2) along each run, coloured by step (orange to purple)."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping %s", path)
        return None
    fig, ax = plt.subplots(figsize=(5, 5))
    cmap = plt.get_cmap("plasma_r")
    for res in results:
        if isinstance(res, RunFailure):
            continue
        losses = np.array([r.losses for r in res.trajectory])
        steps = np.array([r.step for r in res.trajectory], dtype=float)
        frac = steps / max(steps[-1], 1.0)
        ax.scatter(losses[:, 0], losses[:, 1], c=cmap(0.15 + 0.8 * frac), s=4, linewidths=0)
        ax.scatter(losses[:1, 0], losses[:1, 1], c="black", s=18)
    ax.set_xscale("symlog", linthresh=1e-3)
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.set_xlabel("L_1")
    ax.set_ylabel("L_2")
    if title:
        ax.set_title(title)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
