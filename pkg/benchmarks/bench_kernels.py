"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--number 200]

Also times one full quad2 run per backend in a fresh interpreter, since the
backend is fixed at import time by ``EMTL_NUMBA``.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from emtl import _kernels


def _best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench_kernels(repeat, number):
    rng = np.random.default_rng(0)
    rows = []
    for t, d in ((2, 2), (5, 50), (10, 1000)):
        grads = rng.standard_normal((t, d))
        gram = grads @ grads.T
        rates = rng.standard_normal(t) * 5.0
        p = rng.dirichlet(np.ones(t))
        cases = {
            "fw_gram": (
                lambda: _kernels.fw_gram_numpy(gram, 250, 1e-9),
                lambda: _kernels.fw_gram_numba(gram, 250, 1e-9),
            ),
            "player_update": (
                lambda: _kernels.player_numpy(p, rates, 0.5, 0.1),
                lambda: _kernels.player_numba(p, rates, 0.5, 0.1),
            ),
        }
        for name, (np_fn, nb_fn) in cases.items():
            nb_fn()  # compile outside the timing
            t_np = _best(np_fn, repeat, number)
            t_nb = _best(nb_fn, repeat, number)
            rows.append((name, t, d, t_np, t_nb))
    return rows


_RUN = (
    "import time; from emtl.harness import run, RunConfig; from emtl.core import EmtlConfig;"
    "cfg = RunConfig(emtl=EmtlConfig(steps=50)); run(cfg);"
    "s = time.perf_counter(); run(RunConfig(emtl=EmtlConfig(steps=2000), record_every=2000));"
    "print(time.perf_counter() - s)"
)


def bench_run():
    out = {}
    for flag in ("0", "1"):
        env = {**os.environ, "EMTL_NUMBA": flag}
        proc = subprocess.run([sys.executable, "-c", _RUN], env=env, capture_output=True, text=True, check=True)
        out["numba" if flag == "1" else "numpy"] = float(proc.stdout.strip())
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=200)
    args = parser.parse_args()
    if not _kernels.NUMBA_AVAILABLE:
        sys.exit("numba is not installed; nothing to compare")

    print(f"{'kernel':<14} {'T':>3} {'D':>5} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for name, t, d, t_np, t_nb in bench_kernels(args.repeat, args.number):
        print(f"{name:<14} {t:>3} {d:>5} {t_np * 1e6:>10.1f} {t_nb * 1e6:>10.1f} {t_np / t_nb:>7.1f}x")

    runs = bench_run()
    print()
    print(f"quad2 emtl, 2000 steps: numpy {runs['numpy']:.3f} s, numba {runs['numba']:.3f} s")


if __name__ == "__main__":
    main()
