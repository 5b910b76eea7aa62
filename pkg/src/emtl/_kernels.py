"""Inner loops shared by the solvers.

Two implementations of each kernel live here: a loop form compiled with
``numba.njit`` and a vectorised numpy form. The active pair is picked once at
import time. Set ``EMTL_NUMBA=0`` to force the numpy path (numba missing has
the same effect).
"""

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is optional
    numba = None

PROB_FLOOR = 1e-300
KL_GAP_TOL = 1e-10
_BISECT_MAX = 400


def _env_wants_numba():
    flag = os.environ.get("EMTL_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and _env_wants_numba()


def _njit(fn):
    if not NUMBA_AVAILABLE:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# Frank-Wolfe on the Gram matrix of the task gradients
#
# Toward-vertex steps use the exact two-point line search; away steps shrink
# the worst active vertex when that gap is larger. Before every iteration the
# weights are re-optimised over the affine hull of the active vertices (a
# fully corrective step), walking back to the simplex boundary and dropping a
# vertex whenever the affine minimiser leaves it. Without the corrections the
# iterates approach a face of the simplex only at O(1/k).
# ---------------------------------------------------------------------------

def _quad_loop(gram, a):
    n = a.shape[0]
    acc = 0.0
    for i in range(n):
        if a[i] != 0.0:
            row = 0.0
            for j in range(n):
                row += gram[i, j] * a[j]
            acc += a[i] * row
    return acc


_quad_jit = _njit(_quad_loop)


def _correct_loop(gram, alpha):
    n = alpha.shape[0]
    a = alpha.copy()
    for _ in range(n):
        k = 0
        for i in range(n):
            if a[i] > 0.0:
                k += 1
        if k < 2:
            return a
        support = np.empty(k, dtype=np.int64)
        k = 0
        for i in range(n):
            if a[i] > 0.0:
                support[k] = i
                k += 1
        kkt = np.zeros((k + 1, k + 1))
        rhs = np.zeros(k + 1)
        for r in range(k):
            for c in range(k):
                kkt[r, c] = gram[support[r], support[c]]
            kkt[r, k] = 1.0
            kkt[k, r] = 1.0
        rhs[k] = 1.0
        sol = np.linalg.lstsq(kkt, rhs, -1.0)[0]
        total = 0.0
        finite = True
        for r in range(k):
            total += sol[r]
            if not np.isfinite(sol[r]):
                finite = False
        if not finite or abs(total - 1.0) > 1e-9:
            return a
        b = np.zeros(n)
        for r in range(k):
            b[support[r]] = sol[r]
        if _quad_jit(gram, b) > _quad_jit(gram, a):
            return a
        # walk from a toward b, stopping at the first coordinate to hit zero
        t = 1.0
        hit = -1
        for r in range(k):
            i = support[r]
            if b[i] < 0.0:
                ratio = a[i] / (a[i] - b[i])
                if ratio < t:
                    t = ratio
                    hit = i
        if hit < 0:
            for i in range(n):
                b[i] /= total
            return b
        norm = 0.0
        for i in range(n):
            a[i] = a[i] + t * (b[i] - a[i])
            if a[i] < 0.0:
                a[i] = 0.0
        a[hit] = 0.0
        for i in range(n):
            norm += a[i]
        for i in range(n):
            a[i] /= norm
    return a


_correct_jit = _njit(_correct_loop)


def _fw_gram_loop(gram, max_iter, tol):
    n = gram.shape[0]
    alpha = np.full(n, 1.0 / n)
    m_alpha = np.empty(n)
    for it in range(max_iter):
        alpha = _correct_jit(gram, alpha)
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += gram[i, j] * alpha[j]
            m_alpha[i] = acc
        dd = 0.0
        for i in range(n):
            dd += alpha[i] * m_alpha[i]
        # toward-vertex: lowest index wins ties
        s = 0
        for i in range(1, n):
            if m_alpha[i] < m_alpha[s]:
                s = i
        fw_gap = dd - m_alpha[s]
        if fw_gap <= tol:
            return alpha, it
        v = -1
        for i in range(n):
            if alpha[i] > 0.0 and (v < 0 or m_alpha[i] > m_alpha[v]):
                v = i
        away_gap = m_alpha[v] - dd
        if fw_gap >= away_gap or alpha[v] >= 1.0:
            dg = m_alpha[s]
            gg = gram[s, s]
            denom = dd + gg - 2.0 * dg
            if denom <= 0.0:
                return alpha, it
            gamma = (gg - dg) / denom
            if gamma < 0.0:
                gamma = 0.0
            elif gamma > 1.0:
                gamma = 1.0
            for i in range(n):
                alpha[i] *= gamma
            alpha[s] += 1.0 - gamma
        else:
            dg = m_alpha[v]
            gg = gram[v, v]
            denom = dd + gg - 2.0 * dg
            if denom <= 0.0:
                return alpha, it
            step_max = alpha[v] / (1.0 - alpha[v])
            step = (dg - dd) / denom
            drop = step >= step_max
            if drop:
                step = step_max
            for i in range(n):
                alpha[i] *= 1.0 + step
            alpha[v] -= step
            if drop:
                alpha[v] = 0.0
    return alpha, max_iter


def _correct_numpy(gram, alpha):
    a = alpha.copy()
    for _ in range(a.size):
        support = np.flatnonzero(a > 0.0)
        k = support.size
        if k < 2:
            return a
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = gram[np.ix_(support, support)]
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        rhs = np.zeros(k + 1)
        rhs[k] = 1.0
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:k]
        total = sol.sum()
        if not np.all(np.isfinite(sol)) or abs(total - 1.0) > 1e-9:
            return a
        b = np.zeros_like(a)
        b[support] = sol
        if b @ gram @ b > a @ gram @ a:
            return a
        neg = support[sol < 0.0]
        if neg.size == 0:
            return b / total
        ratios = a[neg] / (a[neg] - b[neg])
        hit = int(np.argmin(ratios))
        a = np.maximum(a + ratios[hit] * (b - a), 0.0)
        a[neg[hit]] = 0.0
        a /= a.sum()
    return a


def _fw_gram_numpy(gram, max_iter, tol):
    n = gram.shape[0]
    alpha = np.full(n, 1.0 / n)
    for it in range(max_iter):
        alpha = _correct_numpy(gram, alpha)
        m_alpha = gram @ alpha
        dd = float(alpha @ m_alpha)
        s = int(np.argmin(m_alpha))
        fw_gap = dd - m_alpha[s]
        if fw_gap <= tol:
            return alpha, it
        active = np.flatnonzero(alpha > 0.0)
        v = int(active[np.argmax(m_alpha[active])])
        away_gap = m_alpha[v] - dd
        if fw_gap >= away_gap or alpha[v] >= 1.0:
            dg, gg = m_alpha[s], gram[s, s]
            denom = dd + gg - 2.0 * dg
            if denom <= 0.0:
                return alpha, it
            gamma = min(max((gg - dg) / denom, 0.0), 1.0)
            alpha = gamma * alpha
            alpha[s] += 1.0 - gamma
        else:
            dg, gg = m_alpha[v], gram[v, v]
            denom = dd + gg - 2.0 * dg
            if denom <= 0.0:
                return alpha, it
            step_max = alpha[v] / (1.0 - alpha[v])
            step = min((dg - dd) / denom, step_max)
            alpha = (1.0 + step) * alpha
            alpha[v] -= step
            if step == step_max:
                alpha[v] = 0.0
    return alpha, max_iter


# ---------------------------------------------------------------------------
# Damped exponentiated-gradient step on the KL ball around uniform
# ---------------------------------------------------------------------------

def _softmax_damped_loop(base, lam, out):
    n = base.shape[0]
    scale = 1.0 / (1.0 + lam)
    zmax = -np.inf
    for i in range(n):
        z = base[i] * scale
        out[i] = z
        if z > zmax:
            zmax = z
    total = 0.0
    for i in range(n):
        e = math.exp(out[i] - zmax)
        out[i] = e
        total += e
    for i in range(n):
        out[i] /= total


def _kl_uniform_loop(p):
    n = p.shape[0]
    acc = 0.0
    for i in range(n):
        if p[i] > 0.0:
            acc += p[i] * math.log(n * p[i])
    return acc


_softmax_damped_jit = _njit(_softmax_damped_loop)
_kl_uniform_jit = _njit(_kl_uniform_loop)


def _player_loop(p, rates, eta, budget):
    n = p.shape[0]
    base = np.empty(n)
    for i in range(n):
        base[i] = math.log(max(p[i], PROB_FLOOR)) + eta * rates[i]
    out = np.empty(n)
    _softmax_damped_jit(base, 0.0, out)
    if _kl_uniform_jit(out) <= budget:
        return out, 0.0
    hi = 1.0
    _softmax_damped_jit(base, hi, out)
    while _kl_uniform_jit(out) > budget:
        hi *= 2.0
        _softmax_damped_jit(base, hi, out)
    kl_hi = _kl_uniform_jit(out)
    lo = 0.0
    for _ in range(_BISECT_MAX):
        if budget - kl_hi <= KL_GAP_TOL:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        _softmax_damped_jit(base, mid, out)
        kl_mid = _kl_uniform_jit(out)
        if kl_mid > budget:
            lo = mid
        else:
            hi = mid
            kl_hi = kl_mid
    _softmax_damped_jit(base, hi, out)
    return out, hi


def _softmax_damped_numpy(base, lam):
    z = base * (1.0 / (1.0 + lam))
    e = np.exp(z - z.max())
    return e / e.sum()


def _kl_uniform_numpy(p):
    pos = p > 0.0
    return float(np.sum(p[pos] * np.log(p.size * p[pos])))


def _player_numpy(p, rates, eta, budget):
    base = np.log(np.maximum(p, PROB_FLOOR)) + eta * rates
    out = _softmax_damped_numpy(base, 0.0)
    if _kl_uniform_numpy(out) <= budget:
        return out, 0.0
    hi = 1.0
    out = _softmax_damped_numpy(base, hi)
    while _kl_uniform_numpy(out) > budget:
        hi *= 2.0
        out = _softmax_damped_numpy(base, hi)
    kl_hi = _kl_uniform_numpy(out)
    lo = 0.0
    for _ in range(_BISECT_MAX):
        if budget - kl_hi <= KL_GAP_TOL:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        out = _softmax_damped_numpy(base, mid)
        kl_mid = _kl_uniform_numpy(out)
        if kl_mid > budget:
            lo = mid
        else:
            hi = mid
            kl_hi = kl_mid
    return _softmax_damped_numpy(base, hi), hi


fw_gram_numba = _njit(_fw_gram_loop)
player_numba = _njit(_player_loop)
kl_uniform_numba = _kl_uniform_jit

fw_gram_numpy = _fw_gram_numpy
player_numpy = _player_numpy
kl_uniform_numpy = _kl_uniform_numpy

if USE_NUMBA:
    fw_gram = fw_gram_numba
    player_update = player_numba
    kl_uniform = kl_uniform_numba
else:
    fw_gram = fw_gram_numpy
    player_update = player_numpy
    kl_uniform = kl_uniform_numpy


def backend():
    """Name of the active kernel backend: ``"numba"`` or ``"numpy"``."""
    return "numba" if USE_NUMBA else "numpy"
