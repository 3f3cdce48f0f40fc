"""Simulated stochastic measures on ``[0, T]``.

A ``Driver`` stores, for every path, the value of the measure on each cell of a
dyadic grid with ``n = 2**k`` cells.  Measures of grid-aligned interval unions
and integrals of bounded deterministic functions are sums of those
increments, so finite additivity holds per path by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import DomainError, GridError, ParameterError, PreconditionError
from .prob import Ensemble

KINDS = ("wiener", "fbm", "compensated_poisson", "deterministic")
MAX_LOG2_N = 14


def _log2_exact(n):
    n = int(n)
    if n < 1 or n & (n - 1):
        raise GridError(f"grid size must be a power of two, got {n}")
    return n.bit_length() - 1


@dataclass(frozen=True, eq=False)
class Driver:
    kind: str
    T: float
    n: int
    increments: np.ndarray = field(repr=False)
    space_id: str
    params: dict = field(default_factory=dict)

    @property
    def path_count(self):
        return self.increments.shape[0]

    @property
    def log2_n(self):
        return _log2_exact(self.n)

    @property
    def dt(self):
        return self.T / self.n

    def grid(self, level=None):
        level = self.log2_n if level is None else level
        return np.linspace(0.0, self.T, (1 << level) + 1)

    def aggregated(self, level):
        """Increments summed onto the ``2**level``-cell grid, shape ``(M, 2**level)``."""
        if not 0 <= level <= self.log2_n:
            raise GridError(f"level {level} outside [0, {self.log2_n}]")
        if level == self.log2_n:
            return self.increments
        factor = self.n >> level
        return self.increments.reshape(self.path_count, 1 << level, factor).sum(axis=2)

    def path(self):
        """Cumulative values ``mu([0, t_j])`` at the grid points, shape ``(M, n+1)``."""
        out = np.zeros((self.path_count, self.n + 1))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out

    def path_at(self, t):
        """``mu([0, t])`` with linear interpolation between grid points, shape ``(M, len(t))``."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if np.any(t < -1e-12) or np.any(t > self.T * (1 + 1e-12)):
            raise DomainError("time outside [0, T]")
        pos = np.clip(t / self.dt, 0.0, self.n)
        idx = np.minimum(np.floor(pos).astype(np.int64), self.n - 1)
        return K.gather_lerp(self.path(), idx, pos - idx)

    def __neg__(self):
        inc = np.negative(self.increments)
        inc.setflags(write=False)
        return Driver(self.kind, self.T, self.n, inc, self.space_id, dict(self.params, negated=True))


def _cell_integrals(rho, T, n):
    if callable(rho):
        nodes, weights = np.polynomial.legendre.leggauss(8)
        edges = np.linspace(0.0, T, n + 1)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        pts = mid[:, None] + half[:, None] * nodes[None, :]
        vals = np.asarray(rho(pts.ravel()), dtype=np.float64).reshape(pts.shape)
        out = (vals * weights).sum(axis=1) * half
    else:
        out = np.full(n, float(rho) * T / n)
    if not np.all(np.isfinite(out)):
        raise ParameterError("density rho must be bounded")
    return out


def _fgn_eigenvalues(n, H):
    k = np.arange(n + 1, dtype=np.float64)
    r = 0.5 * ((k + 1) ** (2 * H) - 2 * k ** (2 * H) + np.abs(k - 1) ** (2 * H))
    c = np.concatenate([r, r[-2:0:-1]])
    lam = np.fft.fft(c).real
    if lam.min() < -1e-10 * lam.max():
        raise ParameterError("circulant embedding is not nonnegative definite")
    return np.clip(lam, 0.0, None)


def fgn_increments(ps, n, H, T, tag):
    """Exact fractional Gaussian noise on ``n`` cells of ``[0, T]`` by circulant embedding."""
    lam = _fgn_eigenvalues(n, H)
    z = ps.normal(tag, (2, 2 * n))
    w = np.sqrt(lam / (2 * n)) * (z[:, 0] + 1j * z[:, 1])
    y = np.fft.fft(w, axis=1)
    return y.real[:, :n] * (T / n) ** H


def make_driver(ps, kind, T=1.0, n=256, *, H=None, lam=None, rho=None, stream=None):
    """Simulate a stochastic measure on the dyadic grid of ``[0, T]``.

    Parameters
    ----------
    ps : ProbSpace
    kind : {"wiener", "fbm", "compensated_poisson", "deterministic"}
    T : float
        Horizon.
    n : int
        Number of cells, a power of two no larger than ``2**14``.
    H : float
        Hurst index for ``fbm``; must lie in ``(1/2, 1)``.
    lam : float
        Jump intensity for ``compensated_poisson``.
    rho : float or callable
        Density for ``deterministic`` (``mu(A) = int_A rho dt``); defaults to 1.
    stream : str, optional
        Extra stream label so several independent drivers of one kind can
        live on the same ``ProbSpace``.
    """
    if kind not in KINDS:
        raise ParameterError(f"unknown driver kind {kind!r}; expected one of {KINDS}")
    if not T > 0:
        raise ParameterError("horizon T must be positive")
    log2n = _log2_exact(n)
    if log2n > MAX_LOG2_N:
        raise GridError(f"n = {n} exceeds 2**{MAX_LOG2_N}")
    tag = f"driver/{kind}/{stream if stream is not None else 'default'}"
    M = ps.path_count
    dt = T / n
    params = {"stream": stream}
    if kind == "wiener":
        inc = ps.normal(tag, n) * math.sqrt(dt)
    elif kind == "fbm":
        if H is None or not 0.5 < H < 1.0:
            raise ParameterError(f"H out of (1/2,1): {H}")
        inc = fgn_increments(ps, n, H, T, tag)
        params["H"] = float(H)
    elif kind == "compensated_poisson":
        if lam is None or not lam > 0:
            raise ParameterError(f"intensity lam must be positive, got {lam}")
        inc = ps.poisson(tag, lam * dt, n) - lam * dt
        params["lam"] = float(lam)
    else:
        rho = 1.0 if rho is None else rho
        cells = _cell_integrals(rho, T, n)
        inc = np.broadcast_to(cells, (M, n))
        params["rho"] = rho
    inc = np.asarray(inc, dtype=np.float64)
    if inc.flags.writeable:
        inc.setflags(write=False)
    return Driver(kind, float(T), int(n), inc, ps.space_id, params)


@dataclass(frozen=True)
class IntervalUnion:
    """A finite union of closed intervals snapped to a dyadic grid.

    Stored as sorted, disjoint, half-open cell-index ranges ``[i, j)``.
    """

    ranges: tuple
    T: float
    n: int
    max_snap: float = 0.0

    @classmethod
    def snap(cls, intervals, T, n):
        T = float(T)
        h = T / n
        tol = 1e-12 * max(T, 1.0)
        raw = []
        max_snap = 0.0
        for a, b in intervals:
            if a > b:
                raise DomainError(f"interval [{a}, {b}] has a > b")
            if a < -tol or b > T + tol:
                raise DomainError(f"interval [{a}, {b}] leaves [0, {T}]")
            ia, ib = round(a / h), round(b / h)
            max_snap = max(max_snap, abs(ia * h - a), abs(ib * h - b))
            if max_snap > h:
                raise GridError("snapping moved an endpoint by more than one cell")
            if ib > ia:
                raw.append((int(ia), int(ib)))
        raw.sort()
        merged = []
        for ia, ib in raw:
            if merged and ia <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], ib))
            else:
                merged.append((ia, ib))
        return cls(tuple(merged), T, int(n), max_snap)

    @property
    def intervals(self):
        h = self.T / self.n
        return [(i * h, j * h) for i, j in self.ranges]

    def length(self):
        return sum(j - i for i, j in self.ranges) * self.T / self.n


def measure(d, A):
    """``mu(A)`` per path for a grid-aligned interval union (or list of intervals)."""
    if not isinstance(A, IntervalUnion):
        A = IntervalUnion.snap(A, d.T, d.n)
    if A.n != d.n or A.T != d.T:
        raise GridError("interval union was snapped to a different grid")
    total = np.zeros(d.path_count)
    for i, j in A.ranges:
        total = total + d.increments[:, i:j].sum(axis=1)
    return Ensemble(total, d.space_id)


def _left_values(d, g, level):
    t = d.grid(level)[:-1]
    probe = np.asarray(g(d.grid()), dtype=np.float64)
    if not np.all(np.isfinite(probe)):
        raise PreconditionError("integrand is not bounded on [0, T]")
    return np.asarray(g(t), dtype=np.float64)


def integrate_det(d, g, level=None):
    """Left-point Riemann-Stieltjes sum ``sum_k g(t_k) mu(cell_k)`` on ``2**level`` cells."""
    level = d.log2_n if level is None else level
    w = _left_values(d, g, level)
    return Ensemble(K.weighted_rows(d.aggregated(level), w), d.space_id)


def integrate_det_many(d, weights, level=None):
    """Integrate several deterministic integrands at once.

    ``weights`` has shape ``(2**level, K)`` and holds the integrands at the left
    cell ends; the result has shape ``(M, K)``.
    """
    level = d.log2_n if level is None else level
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[0] != 1 << level:
        raise GridError("weights must have one row per cell")
    if not np.all(np.isfinite(weights)):
        raise PreconditionError("integrand is not bounded")
    return K.row_dot(d.aggregated(level), weights)
