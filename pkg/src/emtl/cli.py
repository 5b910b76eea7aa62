"""Command-line entry point: ``emtl run | grid | diag-theorem1``.

Exit status is 0 on success, 1 for a bad configuration and 2 when a run fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .core import EmtlConfig, InvalidInputError
from .harness import (
    RunConfig,
    RunFailure,
    resolve_problem,
    run_config_from_dict,
    run_grid,
    theorem1_diagnostic,
    write_loss_svg,
    write_summary,
)
from .weighting import STRATEGIES

EXIT_OK, EXIT_CONFIG, EXIT_RUN = 0, 1, 2

log = logging.getLogger("emtl")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="emtl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one method on one problem from its init points")
    r.add_argument("--problem", default="quad2", choices=["quad2", "synthreg"])
    r.add_argument("--method", default="emtl", choices=sorted(STRATEGIES))
    r.add_argument("--rho", type=float, default=EmtlConfig.rho)
    r.add_argument("--epsilon", type=float, default=EmtlConfig.epsilon)
    r.add_argument("--eta-p", type=float, default=EmtlConfig.eta_p)
    r.add_argument("--lr", type=float, default=EmtlConfig.lr)
    r.add_argument("--steps", type=int, default=EmtlConfig.steps)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--scale", type=_floats, default=None, help="per-task scale factors, e.g. 1,100")
    r.add_argument("--init", type=int, default=None, help="init point index (default: all)")
    r.add_argument("--record-every", type=int, default=1)
    r.add_argument("--lr-decay", action="store_true", help="halve lr every 40%% of the budget")
    r.add_argument("--parallelism", type=int, default=1)
    r.add_argument("--out", required=True, help="output directory")

    g = sub.add_parser("grid", help="run a JSON list of run configs")
    g.add_argument("--config", required=True)

    d = sub.add_parser("diag-theorem1", help="relative-rate spread vs held-out gap sweep")
    d.add_argument("--config", required=True)
    d.add_argument("--out", default=None, help="report path (default: print to stdout)")
    return parser


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc


def _finish(results, out_dir, svg):
    out_dir = Path(out_dir)
    summary = write_summary(results, out_dir / "summary.json")
    print(f"wrote {summary}")
    if svg:
        quad = [r for r in results if not isinstance(r, RunFailure)]
        if quad:
            path = write_loss_svg(quad, out_dir / "losses.svg")
            if path:
                print(f"wrote {path}")
    failed = [r for r in results if isinstance(r, RunFailure)]
    for f in failed:
        print(f"run {f.index} failed: {f.message}", file=sys.stderr)
    return EXIT_RUN if failed else EXIT_OK


def cmd_run(args):
    problem = {"name": args.problem}
    if args.scale is not None:
        problem["scale_factors"] = args.scale
    if args.problem == "synthreg":
        problem["seed"] = args.seed
    cfg = EmtlConfig(
        rho=args.rho, eta_p=args.eta_p, epsilon=args.epsilon, lr=args.lr, steps=args.steps
    )
    spec = resolve_problem(problem, args.seed)
    inits = range(len(spec.init_points)) if args.init is None else [args.init]
    out = Path(args.out)
    configs = [
        RunConfig(
            problem=problem,
            method=args.method,
            emtl=cfg,
            seed=args.seed,
            record_every=args.record_every,
            output_path=str(out / f"{args.problem}_{args.method}_init{i}.csv"),
            init_index=i,
            lr_decay=args.lr_decay,
        )
        for i in inits
    ]
    results = run_grid(configs, args.parallelism)
    return _finish(results, out, svg=args.problem == "quad2")


def cmd_grid(args):
    raw = _load_json(args.config)
    base = Path(args.config).parent
    if isinstance(raw, list):
        raw = {"runs": raw}
    if not isinstance(raw, dict) or not raw.get("runs"):
        raise InvalidInputError("grid config needs a non-empty 'runs' list")
    configs = [run_config_from_dict(d, base) for d in raw["runs"]]
    out_dir = raw.get("output_dir", ".")
    if not Path(out_dir).is_absolute():
        out_dir = base / out_dir
    results = run_grid(configs, raw.get("parallelism", 1))
    svg = all(
        (c.problem if isinstance(c.problem, str) else c.problem.get("name")) == "quad2"
        for c in configs
    )
    return _finish(results, out_dir, svg=raw.get("svg", svg))


def cmd_diag(args):
    raw = _load_json(args.config)
    if not isinstance(raw, dict):
        raise InvalidInputError("diagnostic config must be a JSON object")
    raw = dict(raw)
    rhos = raw.pop("rhos", None)
    seeds = raw.pop("seeds", None)
    out_path = raw.pop("report_path", None)
    if out_path and not Path(out_path).is_absolute():
        out_path = Path(args.config).parent / out_path
    out_path = out_path or args.out
    raw.setdefault("problem", "synthreg")
    cfg = run_config_from_dict(raw, Path(args.config).parent)
    kwargs = {}
    if rhos is not None:
        kwargs["rhos"] = rhos
    report = theorem1_diagnostic(cfg.problem, cfg, seeds=seeds, **kwargs)
    text = json.dumps(report, indent=2)
    if out_path:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(text)
        print(f"wrote {out_path}")
    else:
        print(text)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "grid": cmd_grid, "diag-theorem1": cmd_diag}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except (InvalidInputError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a run failure
        log.exception("run failed")
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
