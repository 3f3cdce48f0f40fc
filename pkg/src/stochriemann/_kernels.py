"""Hot inner loops, each with a numba implementation and a numpy fallback.

The backend is chosen once at import time from the ``STOCHRIEMANN_BACKEND``
environment variable (``numba`` or ``numpy``).  When unset, numba is used if it
imports.  ``use_backend`` switches temporarily; the benchmark and the parity
tests rely on it.

Kernels that only permute or compare values (``kyfan_rows``, ``subset_sums``,
``gather_lerp``) return bit-identical results on both backends.  The
contractions (``row_dot``, ``weighted_rows``) may differ in the last ulp
because the numpy path goes through BLAS.
"""

import contextlib
import os

import numpy as np
from scipy.linalg import solve_banded

try:
    import numba as nb

    # the bundled TBB is often too old; skip it rather than warn on every launch
    nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    nb = None
    HAS_NUMBA = False

_requested = os.environ.get("STOCHRIEMANN_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ImportError(f"STOCHRIEMANN_BACKEND must be 'numba' or 'numpy', got {_requested!r}")
_backend = "numpy" if (_requested == "numpy" or not HAS_NUMBA) else "numba"


def backend():
    return _backend


@contextlib.contextmanager
def use_backend(name):
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(name)
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    previous = _backend
    _backend = name
    try:
        yield
    finally:
        _backend = previous


# ---------------------------------------------------------------- numpy paths


def _kyfan_rows_np(a):
    m = a.shape[1]
    s = np.sort(np.abs(a), axis=1)[:, ::-1]
    s = np.concatenate([s, np.zeros((a.shape[0], 1))], axis=1)
    cand = np.maximum(s, np.arange(m + 1) / m)
    return cand.min(axis=1)


def _subset_sums_np(x):
    l, m = x.shape
    out = np.zeros((1 << l, m))
    for k in range(l):
        half = 1 << k
        out[half : 2 * half] = out[:half] + x[k]
    return out


def _gather_lerp_np(paths, idx, frac):
    return paths[:, idx] * (1.0 - frac) + paths[:, idx + 1] * frac


def _row_dot_np(a, w):
    return a @ w


def _weighted_rows_np(a, w):
    return a @ w


def _tridiag_solve_np(lower, diag, upper, rhs):
    n = diag.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, rhs)


# ---------------------------------------------------------------- numba paths

if HAS_NUMBA:

    @nb.njit(cache=True)
    def _count_above(x, d):
        c = 0
        for v in x:
            if v > d:
                c += 1
        return c

    @nb.njit(parallel=True, cache=True)
    def _kyfan_rows_nb(a):
        # no full sort: bisect for the smallest k with #{|x| > k/M} <= k, then the
        # answer is min(a_(k), k/M) with a_(k) the k-th largest |x|
        r, m = a.shape
        out = np.empty(r)
        for i in nb.prange(r):
            x = np.abs(a[i])
            lo, hi = 0, m
            while lo < hi:
                mid = (lo + hi) // 2
                if _count_above(x, mid / m) <= mid:
                    hi = mid
                else:
                    lo = mid + 1
            k = lo
            if k == 0:
                out[i] = 0.0
                continue
            top = k / m
            bot = (k - 1) / m
            n_ge = 0
            n_mid = 0
            for v in x:
                if v >= top:
                    n_ge += 1
                elif v > bot:
                    n_mid += 1
            if n_ge >= k:
                out[i] = top
                continue
            # a_(k) lies strictly between (k-1)/M and k/M
            b = np.empty(n_mid)
            j = 0
            for v in x:
                if bot < v < top:
                    b[j] = v
                    j += 1
            b.sort()
            out[i] = b[n_mid - (k - n_ge)]
        return out

    @nb.njit(cache=True)
    def _subset_sums_nb(x):
        l, m = x.shape
        out = np.zeros((1 << l, m))
        for mask in range(1, 1 << l):
            hb = 0
            while (mask >> (hb + 1)) != 0:
                hb += 1
            prev = mask ^ (1 << hb)
            for j in range(m):
                out[mask, j] = out[prev, j] + x[hb, j]
        return out

    @nb.njit(parallel=True, cache=True)
    def _gather_lerp_nb(paths, idx, frac):
        m = paths.shape[0]
        n = idx.shape[0]
        out = np.empty((m, n))
        for p in nb.prange(m):
            for j in range(n):
                out[p, j] = paths[p, idx[j]] * (1.0 - frac[j]) + paths[p, idx[j] + 1] * frac[j]
        return out

    @nb.njit(parallel=True, cache=True)
    def _row_dot_nb(a, w):
        m, n = a.shape
        k = w.shape[1]
        out = np.zeros((m, k))
        for p in nb.prange(m):
            for i in range(n):
                ai = a[p, i]
                if ai != 0.0:
                    for j in range(k):
                        out[p, j] += ai * w[i, j]
        return out

    @nb.njit(parallel=True, cache=True)
    def _weighted_rows_nb(a, w):
        m, n = a.shape
        out = np.zeros(m)
        for p in nb.prange(m):
            acc = 0.0
            for i in range(n):
                acc += a[p, i] * w[i]
            out[p] = acc
        return out

    @nb.njit(cache=True)
    def _tridiag_solve_nb(lower, diag, upper, rhs):
        # Thomas algorithm on every column of a 2-D right-hand side
        n, k = rhs.shape
        c = np.empty(n)
        d = np.empty((n, k))
        c[0] = upper[0] / diag[0]
        for j in range(k):
            d[0, j] = rhs[0, j] / diag[0]
        for i in range(1, n):
            den = diag[i] - lower[i] * c[i - 1]
            c[i] = upper[i] / den
            for j in range(k):
                d[i, j] = (rhs[i, j] - lower[i] * d[i - 1, j]) / den
        x = np.empty((n, k))
        for j in range(k):
            x[n - 1, j] = d[n - 1, j]
        for i in range(n - 2, -1, -1):
            for j in range(k):
                x[i, j] = d[i, j] - c[i] * x[i + 1, j]
        return x


# ---------------------------------------------------------------- dispatch


def kyfan_rows(a):
    """Empirical Ky Fan quasi-norm of every row of a 2-D array."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if _backend == "numba":
        return _kyfan_rows_nb(a)
    return _kyfan_rows_np(a)


def subset_sums(x):
    """All ``2**l`` subset sums of the rows of ``x`` (shape ``(l, M)``).

    Row ``mask`` of the result is the sum of ``x[k]`` over the set bits ``k``
    of ``mask``; the highest bit is always added last so both backends agree
    bit for bit.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if _backend == "numba":
        return _subset_sums_nb(x)
    return _subset_sums_np(x)


def gather_lerp(paths, idx, frac):
    """Per-path linear interpolation ``paths[:, i]*(1-f) + paths[:, i+1]*f``."""
    paths = np.ascontiguousarray(paths, dtype=np.float64)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    frac = np.ascontiguousarray(frac, dtype=np.float64)
    if _backend == "numba":
        return _gather_lerp_nb(paths, idx, frac)
    return _gather_lerp_np(paths, idx, frac)


def row_dot(a, w):
    """``a @ w`` for path-major ``a`` (M, n) and a weight matrix (n, K)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if _backend == "numba":
        return _row_dot_nb(a, w)
    return _row_dot_np(a, w)


def weighted_rows(a, w):
    """``a @ w`` for path-major ``a`` (M, n) and a weight vector (n,)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if _backend == "numba":
        return _weighted_rows_nb(a, w)
    return _weighted_rows_np(a, w)


def tridiag_solve(lower, diag, upper, rhs):
    """Solve a tridiagonal system; ``lower[0]`` and ``upper[-1]`` are ignored."""
    args = [np.ascontiguousarray(v, dtype=np.float64) for v in (lower, diag, upper, rhs)]
    if _backend == "numba":
        rhs = args[3]
        return _tridiag_solve_nb(*args[:3], rhs.reshape(rhs.shape[0], -1)).reshape(rhs.shape)
    return _tridiag_solve_np(*args)
