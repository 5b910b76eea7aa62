import numpy as np
import pytest

_CRITERIA = []


def record_criterion(name, passed, detail=""):
    _CRITERIA.append((name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _CRITERIA:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {name}" + (f" -- {detail}" if detail else ""))


def simplex_grid_minimizer(grads, resolution=1e-3):
    """Brute-force min of |sum a_t g_t|^2 over a grid on the 1- or 2-simplex."""
    grads = np.asarray(grads, dtype=float)
    gram = grads @ grads.T
    n = int(round(1 / resolution))
    if grads.shape[0] == 2:
        a = np.linspace(0.0, 1.0, n + 1)
        alphas = np.stack([a, 1.0 - a], axis=1)
    elif grads.shape[0] == 3:
        i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        keep = i + j <= n
        a1 = i[keep] / n
        a2 = j[keep] / n
        alphas = np.stack([a1, a2, 1.0 - a1 - a2], axis=1)
    else:
        raise ValueError("grid oracle supports 2 or 3 vectors")
    vals = np.einsum("ki,ij,kj->k", alphas, gram, alphas)
    return alphas[int(np.argmin(vals))]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def assert_records_equal(a, b):
    """Exact field-by-field comparison of two trajectory records."""
    assert a.step == b.step
    for name in ("theta", "losses", "alpha", "p", "effective_weights"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name), err_msg=name)
    np.testing.assert_array_equal(a.relative_rates.raw, b.relative_rates.raw)
    np.testing.assert_array_equal(a.relative_rates.weighted, b.relative_rates.weighted)
    assert a.relative_rates.variance == b.relative_rates.variance
    assert a.objective_diagnostic == b.objective_diagnostic
