import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import simplex_grid_minimizer
from emtl import _kernels
from emtl.core import InvalidInputError
from emtl.minnorm import minnorm_2, minnorm_fw


def test_minnorm_2_orthogonal():
    sol = minnorm_2([1, 0], [0, 1])
    np.testing.assert_array_equal(sol.alpha, [0.5, 0.5])
    np.testing.assert_array_equal(sol.combined, [0.5, 0.5])
    assert sol.squared_norm == 0.5


def test_minnorm_2_colinear_picks_shorter():
    sol = minnorm_2([1, 0], [2, 0])
    np.testing.assert_array_equal(sol.alpha, [1.0, 0.0])
    np.testing.assert_array_equal(sol.combined, [1.0, 0.0])


def test_minnorm_2_opposing_cancel():
    sol = minnorm_2([1, 0], [-1, 0])
    np.testing.assert_array_equal(sol.alpha, [0.5, 0.5])
    np.testing.assert_array_equal(sol.combined, [0.0, 0.0])
    assert sol.squared_norm == 0.0


def test_minnorm_2_identical_is_uniform():
    sol = minnorm_2([1, 2], [1, 2])
    np.testing.assert_array_equal(sol.alpha, [0.5, 0.5])


def test_minnorm_2_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        minnorm_2([1, 0], [1, 0, 0])


def test_fw_matches_closed_form_for_two(rng):
    for _ in range(100):
        g = rng.standard_normal((2, rng.integers(1, 20))) * rng.lognormal(0, 1, (2, 1))
        fw = minnorm_fw(g)
        cf = minnorm_2(g[0], g[1])
        np.testing.assert_allclose(fw.alpha, cf.alpha, atol=1e-6)


def test_fw_identical_gradients():
    g = np.tile([1.5, -2.0, 0.25], (4, 1))
    sol = minnorm_fw(g)
    np.testing.assert_allclose(sol.alpha.sum(), 1.0, atol=1e-12)
    np.testing.assert_array_equal(sol.combined, g[0])


def test_fw_drops_dominated_vertex():
    g = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    oracle = simplex_grid_minimizer(g)
    np.testing.assert_allclose(oracle, [0.5, 0.5, 0.0], atol=1e-12)
    sol = minnorm_fw(g)
    assert sol.alpha[2] == 0.0
    np.testing.assert_allclose(sol.combined, [0.5, 0.5], atol=1e-12)


def test_fw_all_zero_gradients():
    sol = minnorm_fw(np.zeros((3, 4)))
    np.testing.assert_array_equal(sol.alpha, np.full(3, 1 / 3))
    np.testing.assert_array_equal(sol.combined, np.zeros(4))


def test_fw_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        minnorm_fw([[1.0, np.nan], [0.0, 1.0]])
    with pytest.raises(InvalidInputError):
        minnorm_fw([[1.0, 0.0]])


def test_fw_iteration_budget_is_not_an_error():
    g = np.random.default_rng(3).standard_normal((5, 2))
    sol = minnorm_fw(g, max_iter=1)
    assert sol.iterations_used <= 1
    np.testing.assert_allclose(sol.alpha.sum(), 1.0, atol=1e-12)


@pytest.mark.parametrize("t", [2, 3])
def test_fw_agrees_with_grid_oracle(rng, t):
    for _ in range(15):
        g = rng.standard_normal((t, 4))
        np.testing.assert_allclose(minnorm_fw(g).alpha, simplex_grid_minimizer(g), atol=2e-3)


grads_strategy = st.tuples(st.integers(2, 6), st.integers(1, 8), st.integers(0, 2**32 - 1))


@settings(max_examples=200, deadline=None)
@given(grads_strategy)
def test_fw_certificates(params):
    t, d, seed = params
    r = np.random.default_rng(seed)
    g = r.standard_normal((t, d)) * r.lognormal(0, 1, (t, 1))
    sol = minnorm_fw(g)
    d_vec = sol.combined
    dd = d_vec @ d_vec
    assert np.all(sol.alpha >= 0) and abs(sol.alpha.sum() - 1) <= 1e-12
    np.testing.assert_allclose(d_vec, sol.alpha @ g, atol=1e-10)
    assert abs(sol.squared_norm - dd) <= 1e-10
    assert (g @ d_vec).min() >= dd - 1e-6
    assert np.sqrt(dd) <= np.linalg.norm(g, axis=1).min() + 1e-9


def test_scaling_one_gradient_shifts_weight_away(rng):
    for _ in range(50):
        g = rng.standard_normal((2, 3))
        base = minnorm_fw(g).alpha
        if not 1e-3 < base[1] < 1 - 1e-3:
            continue  # optimum at a vertex, the interior formula does not apply
        scaled = g.copy()
        scaled[1] *= 3.0
        assert minnorm_fw(scaled).alpha[1] < base[1]


def test_kernel_backends_agree(rng):
    if not _kernels.NUMBA_AVAILABLE:
        pytest.skip("numba not installed")
    for _ in range(200):
        t = int(rng.integers(2, 8))
        d = int(rng.integers(t, 30))  # affinely independent, so alpha is unique
        g = rng.standard_normal((t, d))
        gram = g @ g.T
        a1, _ = _kernels.fw_gram_numba(gram, 250, 1e-9)
        a2, _ = _kernels.fw_gram_numpy(gram, 250, 1e-9)
        np.testing.assert_allclose(a1, a2, atol=1e-9)
