import os
import subprocess
import sys

import numpy as np
import pytest

from emtl import _kernels


def test_numpy_flag_selects_numpy():
    env = {**os.environ, "EMTL_NUMBA": "0"}
    proc = subprocess.run(
        [sys.executable, "-c", "from emtl import _kernels; print(_kernels.backend())"],
        capture_output=True, text=True, env=env, check=True,
    )
    assert proc.stdout.strip() == "numpy"


@pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba not installed")
def test_backends_agree_on_run():
    code = (
        "from emtl.harness import run, RunConfig; from emtl.core import EmtlConfig;"
        "r = run(RunConfig(emtl=EmtlConfig(steps=200), init_index=3));"
        "print(repr(r.final_theta.tolist()))"
    )
    outs = []
    for flag in ("0", "1"):
        env = {**os.environ, "EMTL_NUMBA": flag}
        proc = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env, check=True)
        outs.append(np.array(eval(proc.stdout.strip())))
    np.testing.assert_allclose(outs[0], outs[1], rtol=1e-10, atol=1e-12)
