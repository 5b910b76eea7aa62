"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""

import time

import numpy as np
import pytest

from conftest import record_criterion, simplex_grid_minimizer
from emtl.core import EmtlConfig, GradientSet, relative_rates
from emtl.harness import RunConfig, RunResult, run_grid, theorem1_diagnostic
from emtl.minnorm import minnorm_fw
from emtl.mirror import damped_update, kl_to_uniform, player_init, player_step
from emtl.problems import QUAD2_INITS, evaluate, fd_gradient, make_quad2, make_synthreg, quad2_eval

TOY_SCALE = (1.0, 100.0)


def _report(name, ok, detail):
    record_criterion(name, bool(ok), detail)
    assert ok, detail


def test_gradient_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    problems = [make_quad2(TOY_SCALE), make_synthreg(seed=0)]
    worst = 0.0
    for spec in problems:
        for _ in range(20):
            if spec.name == "quad2":
                theta = rng.uniform(-4.0, 4.0, spec.dim)
            else:
                theta = rng.standard_normal(spec.dim)
            ev = evaluate(theta, spec)
            for t in range(spec.num_tasks):
                fd = fd_gradient(theta, t, spec)
                err = np.linalg.norm(fd - ev.grads[t]) / max(np.linalg.norm(ev.grads[t]), 1.0)
                worst = max(worst, err)
    elapsed = time.perf_counter() - start
    _report(
        "gradient oracle: rel err < 1e-5, < 5 s",
        worst < 1e-5 and elapsed < 5.0,
        f"max rel err {worst:.2e}, {elapsed:.2f} s",
    )


def test_minnorm_certificate():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    shapes = [(t, d) for t in (2, 3, 5) for d in (2, 50)]
    worst_cert, worst_alpha, degenerate, count = -np.inf, 0.0, 0, 0
    for i in range(200):
        t, d = shapes[i % len(shapes)]
        grads = rng.standard_normal((t, d)) * rng.uniform(0.1, 10.0)
        GradientSet(np.ones(t), grads)  # the instances are valid GradientSets
        sol = minnorm_fw(grads)
        dvec = sol.combined
        worst_cert = max(worst_cert, float(dvec @ dvec - np.min(grads @ dvec)))
        if t <= 3:
            ref = simplex_grid_minimizer(grads)
            gap = float(np.max(np.abs(sol.alpha - ref)))
            if gap > 2e-3:
                # several alphas reach the same point when the gradients are affinely dependent
                ref_d = ref @ grads
                if np.linalg.matrix_rank(grads[1:] - grads[0]) < t - 1 and np.linalg.norm(ref_d - dvec) < 5e-3:
                    degenerate += 1
                    gap = 0.0
            worst_alpha = max(worst_alpha, gap)
        count += 1
    elapsed = time.perf_counter() - start
    _report(
        "min-norm certificate: 1e-6, grid match 2e-3, < 30 s",
        worst_cert <= 1e-6 and worst_alpha <= 2e-3 and elapsed < 30.0,
        f"{count} sets, worst |d|^2 - min g.d {worst_cert:.2e}, worst alpha gap {worst_alpha:.2e}"
        f" ({degenerate} non-unique), {elapsed:.2f} s",
    )


def test_mirror_feasibility():
    rng = np.random.default_rng(99)
    worst_simplex, worst_kl, shortcut_mismatch, steps = 0.0, -np.inf, 0, 0
    for rho in (1e-4, 0.1, 1.2):
        for chain in range(10):
            t = int(rng.integers(2, 6))
            state = player_init(t)
            for _ in range(1000 // 30 + 1):
                rates = rng.standard_normal(t) * 10.0 ** rng.uniform(-3, 2)
                eta = float(10.0 ** rng.uniform(-2, 1))
                free = damped_update(state.p, rates, eta, 0.0)
                free_ok = kl_to_uniform(free) <= np.sqrt(rho)
                state = player_step(state, rates, eta, rho)
                p = state.p
                worst_simplex = max(worst_simplex, abs(p.sum() - 1.0), float(-p.min()))
                worst_kl = max(worst_kl, kl_to_uniform(p) - np.sqrt(rho))
                shortcut_mismatch += (state.lambda_last == 0.0) != free_ok
                steps += 1
    _report(
        "mirror ascent: simplex 1e-12, KL <= sqrt(rho) + 1e-9, lambda=0 iff feasible",
        steps >= 1000 and worst_simplex <= 1e-12 and worst_kl <= 1e-9 and shortcut_mismatch == 0,
        f"{steps} steps, simplex err {worst_simplex:.1e}, KL excess {worst_kl:.1e},"
        f" shortcut mismatches {shortcut_mismatch}",
    )


def test_epsilon_one_degeneration():
    cfg = EmtlConfig(epsilon=1.0, steps=500)
    configs = [
        RunConfig(problem="quad2", method=m, emtl=cfg, seed=3, init_index=i)
        for i in range(len(QUAD2_INITS))
        for m in ("emtl", "mgda")
    ]
    results = run_grid(configs)
    mismatches = 0
    for a, b in zip(results[::2], results[1::2]):
        for ra, rb in zip(a.trajectory, b.trajectory):
            mismatches += not np.array_equal(ra.theta, rb.theta)
    _report(
        "epsilon=1: EMTL and MGDA bit-identical over 500 steps",
        mismatches == 0 and all(len(r.trajectory) == 501 for r in results),
        f"{mismatches} differing parameter snapshots",
    )


def test_relative_rate_scale_invariance():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        t = int(rng.integers(2, 6))
        losses = rng.uniform(0.01, 10.0, t)
        grads = rng.standard_normal((t, 7))
        alpha = rng.dirichlet(np.ones(t))
        base = relative_rates(GradientSet(losses, grads), alpha).raw
        for c in (1e-3, 1.0, 1e3):
            k = int(rng.integers(t))
            l2, g2 = losses.copy(), grads.copy()
            l2[k] *= c
            g2[k] *= c
            scaled = relative_rates(GradientSet(l2, g2), alpha).raw
            worst = max(worst, float(np.max(np.abs(scaled - base) / np.abs(base))))
    _report(
        "relative rate scale invariance < 1e-12",
        worst < 1e-12,
        f"max relative change {worst:.1e}",
    )


@pytest.fixture(scope="module")
def scale_toy():
    start = time.perf_counter()
    cfg = EmtlConfig(steps=2000, lr=1e-2)
    problem = {"name": "quad2", "scale_factors": list(TOY_SCALE)}
    out = {}
    for method in ("emtl", "ls", "mgda"):
        configs = [
            RunConfig(problem=problem, method=method, emtl=cfg, init_index=i)
            for i in range(len(QUAD2_INITS))
        ]
        out[method] = run_grid(configs, parallelism=5)
    out["elapsed"] = time.perf_counter() - start
    out["spec"] = make_quad2(TOY_SCALE)
    return out


def _avg_loss_min(spec):
    return float(np.mean(quad2_eval(spec.pareto_reference, spec).losses))


def test_scale_toy_a_emtl_reaches_average_minimum(scale_toy):
    target = _avg_loss_min(scale_toy["spec"])
    finals = [r.final_avg_loss if isinstance(r, RunResult) else np.inf for r in scale_toy["emtl"]]
    rel = [abs(f - target) / target for f in finals]
    _report(
        "scale-imbalance toy (a): EMTL final average loss within 5% of the minimum from all inits, < 60 s",
        max(rel) <= 0.05 and scale_toy["elapsed"] < 60.0,
        f"minimum {target:.4f}; finals {', '.join(f'{f:.4g}' for f in finals)}; {scale_toy['elapsed']:.1f} s",
    )


def test_scale_toy_b_ls_dragged_by_large_task(scale_toy):
    ref = scale_toy["spec"].pareto_reference

    def dev(r):
        return float(np.linalg.norm(r.final_theta - ref)) if isinstance(r, RunResult) else np.inf

    ls = [dev(r) for r in scale_toy["ls"]]
    em = [dev(r) for r in scale_toy["emtl"]]
    wins = sum(a >= 2.0 * b for a, b in zip(ls, em))
    _report(
        "scale-imbalance toy (b): LS deviation >= 2x EMTL deviation from >= 3 of 5 inits",
        wins >= 3,
        f"{wins}/5; LS {', '.join(f'{d:.3g}' for d in ls)}; EMTL {', '.join(f'{d:.3g}' for d in em)}",
    )


def test_scale_toy_c_mgda_pareto_stationary(scale_toy):
    spec = scale_toy["spec"]
    norms = []
    for r in scale_toy["mgda"]:
        if not isinstance(r, RunResult):
            norms.append(np.inf)
            continue
        norms.append(float(np.sqrt(minnorm_fw(quad2_eval(r.final_theta, spec).grads).squared_norm)))
    _report(
        "scale-imbalance toy (c): MGDA min-norm combined gradient < 1e-4 from all inits",
        max(norms) < 1e-4,
        f"max {max(norms):.2e}",
    )


def test_rate_gap_diagnostic():
    start = time.perf_counter()
    problem = {"name": "synthreg", "scale_factors": [1.0, 4.0, 0.25]}
    cfg = RunConfig(problem=problem, method="emtl", emtl=EmtlConfig(steps=600, lr=0.05), lr_decay=True)
    report = theorem1_diagnostic(problem, cfg, seeds=range(5))
    elapsed = time.perf_counter() - start
    rows = report["rows"]
    stats = [report[k] for k in ("spearman_rho_vs_gap", "spearman_variance_vs_gap", "spearman_rho_vs_variance")]
    ok = (
        len(rows) == len(report["rhos"]) * 5
        and all(r["variance"] >= 0.0 for r in rows)
        and all(isinstance(s, float) and np.isfinite(s) for s in stats)
        and elapsed < 120.0
    )
    _report(
        "rate-gap diagnostic: 5 seeds, nonnegative spreads, rank correlation computed, < 120 s",
        ok,
        f"{len(rows)} rows, spearman(variance, gap) {stats[1]:+.3f}, {elapsed:.1f} s",
    )
