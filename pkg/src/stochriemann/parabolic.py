"""Constant-coefficient parabolic operators on ``R^d`` (``d`` in {1, 2}).

``A g = sum a_ij d_i d_j g + sum b_i d_i g + c g`` with ``a`` symmetric
positive definite.  Its fundamental solution is a drifted Gaussian, so the
semigroup ``S(t) g(x) = int p(x, y, t) g(y) dy`` is evaluated by trapezoid
quadrature against the closed-form kernel.  A Crank-Nicolson solver serves as
an independent finite-difference oracle in one dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import _kernels as K
from .errors import CoverageError, DomainError, GridError, ParameterError

#: Truncation radius multiplier: ``R(t) = 8 sqrt(2 lam_max t) + |b| t``.
RADIUS_FACTOR = 8.0
# trapezoid spacing as a fraction of the narrowest kernel width
_SIGMA_FRACTION = 1.0 / 1.5
# cap on (outputs x lattice nodes) per kernel block
_BLOCK_ELEMS = 1 << 22


class EllipticOperator:
    """``A = sum a_ij d_ij + sum b_i d_i + c`` with constant coefficients.

    Parameters
    ----------
    a : float or (d, d) array
        Symmetric diffusion matrix; its smallest eigenvalue must be at least
        ``ellipticity_floor``.
    b : float or (d,) array, optional
        Drift.
    c : float, optional
        Zeroth-order coefficient.
    """

    def __init__(self, a=1.0, b=None, c=0.0, ellipticity_floor=1e-8):
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        if a.shape[0] != a.shape[1] or a.shape[0] not in (1, 2):
            raise ParameterError(f"a must be 1x1 or 2x2, got shape {a.shape}")
        if not np.allclose(a, a.T, rtol=0, atol=1e-14):
            raise ParameterError("a must be symmetric")
        eig = np.linalg.eigvalsh(a)
        if eig[0] < ellipticity_floor:
            raise ParameterError(f"a is not strongly elliptic: smallest eigenvalue {eig[0]:.3g}")
        d = a.shape[0]
        b = np.zeros(d) if b is None else np.atleast_1d(np.asarray(b, dtype=np.float64))
        if b.shape != (d,):
            raise ParameterError(f"drift must have length {d}")
        self.a = a
        self.b = b
        self.c = float(c)
        self.dim = d
        self.a_inv = np.linalg.inv(a)
        self.det_a = float(np.linalg.det(a))
        self.lam_min = float(eig[0])
        self.lam_max = float(eig[-1])

    def __repr__(self):
        return f"EllipticOperator(a={self.a.tolist()}, b={self.b.tolist()}, c={self.c})"

    @classmethod
    def heat(cls, dim=1):
        return cls(np.eye(dim))

    @property
    def self_adjoint(self):
        return bool(np.all(self.b == 0))

    def radius(self, t):
        """Distance from ``x + b t`` beyond which the kernel mass is negligible."""
        return self.core_radius(t) + float(np.linalg.norm(self.b)) * t

    def core_radius(self, t):
        return RADIUS_FACTOR * math.sqrt(2.0 * self.lam_max * t)

    def sigma_min(self, t):
        return math.sqrt(2.0 * self.lam_min * t)

    # -- kernel ---------------------------------------------------------------

    def log_kernel(self, x, y, t):
        """``log p(x, y, t)``; ``x`` and ``y`` broadcast over leading axes, last axis ``d``."""
        if not np.all(np.asarray(t) > 0):
            raise DomainError("the kernel needs t > 0")
        t = np.asarray(t, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        z = x + self.b * t[..., None] - y
        quad = np.einsum("...i,ij,...j->...", z, self.a_inv, z)
        return self.c * t - 0.5 * self.dim * np.log(4 * math.pi * t) - 0.5 * math.log(self.det_a) - quad / (4 * t)

    def kernel(self, x, y, t):
        """``p(x, y, t) = e^{ct} (4 pi t)^{-d/2} det(a)^{-1/2} exp(-<a^{-1} z, z>/(4t))``, ``z = x + bt - y``."""
        return np.exp(self.log_kernel(_pts(x, self.dim), _pts(y, self.dim), t))

    def kernel_matrix(self, xs, ys, t):
        """``p(x_i, y_j, t)`` for ``(N, d)`` and ``(Q, d)`` point sets."""
        xs = _pts(xs, self.dim)
        ys = _pts(ys, self.dim)
        return np.exp(self.log_kernel(xs[:, None, :], ys[None, :, :], t))

    # -- action on analytic functions ------------------------------------------

    def apply(self, g, pts):
        """``A g`` at ``pts`` from the analytic derivatives of ``g``."""
        pts = _pts(pts, self.dim)
        return (
            np.einsum("ij,nij->n", self.a, g.hessian(pts)) + g.gradient(pts) @ self.b + self.c * g.value(pts)
        )

    def adjoint_apply(self, phi, pts):
        """``A* phi = sum a_ij d_ij phi - sum b_i d_i phi + c phi`` at ``pts``."""
        pts = _pts(pts, self.dim)
        return (
            np.einsum("ij,nij->n", self.a, phi.hessian(pts)) - phi.gradient(pts) @ self.b + self.c * phi.value(pts)
        )

    def apply_grid(self, gf):
        """``A`` applied to grid data by second-order central differences (interior nodes).

        Returns a ``GridFunction`` on the grid with one node trimmed on every side.
        """
        grid = gf.grid
        u = gf.values
        h = grid.h
        core = tuple(slice(1, -1) for _ in range(self.dim))
        out = self.c * u[core]
        for i in range(self.dim):
            out = out + self.b[i] * _central(u, i, h, self.dim)
            for j in range(self.dim):
                out = out + self.a[i, j] * _second(u, i, j, h, self.dim)
        return GridFunction(grid.trimmed(1), out)


def _offset(u, offsets):
    """Interior view of ``u`` shifted by ``offsets`` nodes along each axis."""
    return tuple(slice(1 + o, n - 1 + o) for n, o in zip(u.shape, offsets))


def _unit(dim, i, k):
    return tuple(k if ax == i else 0 for ax in range(dim))


def _central(u, i, h, dim):
    return (u[_offset(u, _unit(dim, i, 1))] - u[_offset(u, _unit(dim, i, -1))]) / (2 * h)


def _second(u, i, j, h, dim):
    if i == j:
        plus, minus = _unit(dim, i, 1), _unit(dim, i, -1)
        return (u[_offset(u, plus)] - 2 * u[_offset(u, (0,) * dim)] + u[_offset(u, minus)]) / (h * h)

    def at(ki, kj):
        return u[_offset(u, tuple(ki if ax == i else kj if ax == j else 0 for ax in range(dim)))]

    return (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4 * h * h)


def _pts(x, dim):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    if x.ndim == 1:
        x = x.reshape(-1, 1) if dim == 1 else x.reshape(1, -1)
    if x.shape[-1] != dim:
        raise DomainError(f"points must have {dim} coordinates")
    return x


# ---------------------------------------------------------------- grids


class UniformGrid:
    """Tensor grid with equal spacing ``h`` on every axis, nodes at both ends."""

    def __init__(self, lows, highs, h):
        lows = tuple(float(v) for v in np.atleast_1d(lows))
        highs = tuple(float(v) for v in np.atleast_1d(highs))
        if len(lows) != len(highs) or len(lows) not in (1, 2):
            raise GridError("grid must be one- or two-dimensional")
        if not h > 0:
            raise GridError("spacing must be positive")
        counts = []
        for a, b in zip(lows, highs):
            n = round((b - a) / h)
            if n < 1 or abs(n * h - (b - a)) > 1e-9 * max(1.0, abs(b - a)):
                raise GridError(f"[{a}, {b}] is not a whole number of cells of width {h}")
            counts.append(n + 1)
        self.lows, self.highs, self.h = lows, highs, float(h)
        self.shape = tuple(counts)
        self.dim = len(lows)

    def __repr__(self):
        return f"UniformGrid({self.lows}, {self.highs}, h={self.h})"

    def __eq__(self, other):
        return isinstance(other, UniformGrid) and (self.lows, self.highs, self.h) == (other.lows, other.highs, other.h)

    def __hash__(self):
        return hash((self.lows, self.highs, self.h))

    @classmethod
    def symmetric(cls, half_width, h, dim=1):
        return cls((-half_width,) * dim, (half_width,) * dim, h)

    @property
    def axes(self):
        return [a + self.h * np.arange(n) for a, n in zip(self.lows, self.shape)]

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def cell_volume(self):
        return self.h**self.dim

    def points(self):
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def trimmed(self, k):
        return UniformGrid(
            tuple(a + k * self.h for a in self.lows), tuple(b - k * self.h for b in self.highs), self.h
        )

    def covers(self, lows, highs):
        tol = 1e-9 * self.h
        return all(a <= lo + tol and hi <= b + tol for a, b, lo, hi in zip(self.lows, self.highs, lows, highs))

    def index_of(self, x):
        """Node indices of points that lie on the grid, or ``GridError``."""
        x = _pts(x, self.dim)
        pos = (x - np.asarray(self.lows)) / self.h
        idx = np.rint(pos).astype(np.int64)
        if np.any(np.abs(pos - idx) > 1e-7) or np.any(idx < 0) or np.any(idx >= np.asarray(self.shape)):
            raise GridError("points are not grid nodes")
        return np.ravel_multi_index(tuple(idx.T), self.shape)


class GridFunction:
    """Values of a deterministic function at the nodes of a ``UniformGrid``."""

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=np.float64).reshape(grid.shape)
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    def __repr__(self):
        return f"GridFunction({self.grid!r})"

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, np.asarray(fn(grid.points()), dtype=np.float64))

    @property
    def flat(self):
        return self.values.reshape(-1)

    def interpolator(self):
        method = "cubic" if min(self.grid.shape) >= 4 else "linear"
        return RegularGridInterpolator(self.grid.axes, self.values, method=method)

    def sup_distance(self, other):
        if self.grid != other.grid:
            raise GridError("grid functions live on different grids")
        return float(np.max(np.abs(self.values - other.values)))


# ---------------------------------------------------------------- test functions


class AnalyticFunction:
    """A deterministic function with closed-form value, gradient and Hessian."""

    dim = 1

    def __call__(self, pts):
        return self.value(_pts(pts, self.dim))

    def value(self, pts):
        raise NotImplementedError

    def gradient(self, pts):
        raise NotImplementedError

    def hessian(self, pts):
        raise NotImplementedError

    def integral(self):
        """``int_{R^d}`` of the function, or ``None`` when it does not exist."""
        return None

    def decay_radius(self, eps=1e-10):
        """Radius beyond which ``|g| < eps * max|g|``; ``inf`` for non-decaying functions."""
        return math.inf


@dataclass(frozen=True)
class Constant(AnalyticFunction):
    level: float = 1.0
    dim: int = 1

    def value(self, pts):
        return np.full(len(pts), self.level)

    def gradient(self, pts):
        return np.zeros((len(pts), self.dim))

    def hessian(self, pts):
        return np.zeros((len(pts), self.dim, self.dim))


@dataclass(frozen=True)
class TestFunction(AnalyticFunction):
    """``phi(x) = q(x - x0) exp(-alpha |x - x0|^2)`` with ``q(z) = q0 + q1.z + z^T q2 z``."""

    __test__ = False  # keep pytest from collecting this class

    center: tuple = (0.0,)
    alpha: float = 1.0
    q0: float = 1.0
    q1: tuple = None
    q2: tuple = None

    def __post_init__(self):
        center = tuple(float(v) for v in np.atleast_1d(self.center))
        d = len(center)
        if d not in (1, 2):
            raise ParameterError("test functions live in one or two dimensions")
        if not self.alpha > 0:
            raise ParameterError("alpha must be positive")
        q1 = np.zeros(d) if self.q1 is None else np.atleast_1d(np.asarray(self.q1, dtype=np.float64))
        q2 = np.zeros((d, d)) if self.q2 is None else np.atleast_2d(np.asarray(self.q2, dtype=np.float64))
        q2 = 0.5 * (q2 + q2.T)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "q1", tuple(q1))
        object.__setattr__(self, "q2", tuple(map(tuple, q2)))

    @property
    def dim(self):
        return len(self.center)

    def _parts(self, pts):
        pts = _pts(pts, self.dim)
        z = pts - np.asarray(self.center)
        q1 = np.asarray(self.q1)
        q2 = np.asarray(self.q2)
        env = np.exp(-self.alpha * np.sum(z * z, axis=1))
        q = self.q0 + z @ q1 + np.einsum("ni,ij,nj->n", z, q2, z)
        dq = q1[None, :] + 2 * z @ q2
        return z, env, q, dq, q2

    def value(self, pts):
        _, env, q, _, _ = self._parts(pts)
        return q * env

    def gradient(self, pts):
        z, env, q, dq, _ = self._parts(pts)
        return (dq - 2 * self.alpha * z * q[:, None]) * env[:, None]

    def hessian(self, pts):
        z, env, q, dq, q2 = self._parts(pts)
        a = self.alpha
        eye = np.eye(self.dim)
        de = -2 * a * z  # gradient of the envelope divided by the envelope
        d2e = 4 * a * a * z[:, :, None] * z[:, None, :] - 2 * a * eye[None]
        h = 2 * q2[None] + dq[:, :, None] * de[:, None, :] + de[:, :, None] * dq[:, None, :] + q[:, None, None] * d2e
        return h * env[:, None, None]

    def integral(self):
        q2 = np.asarray(self.q2)
        return (math.pi / self.alpha) ** (self.dim / 2) * (self.q0 + np.trace(q2) / (2 * self.alpha))

    def decay_radius(self, eps=1e-10):
        r = math.sqrt(math.log(1.0 / eps) / self.alpha)
        if np.any(np.asarray(self.q1)) or np.any(np.asarray(self.q2)):
            # room for the polynomial factor, which grows like |z|^2
            r += 2.0 / math.sqrt(self.alpha)
        return r


@dataclass(frozen=True)
class CallableFunction(AnalyticFunction):
    """A plain vectorised function with no derivative information."""

    fn: object = None
    dim: int = 1

    def value(self, pts):
        return np.asarray(self.fn(pts), dtype=np.float64).reshape(-1)


# ---------------------------------------------------------------- semigroup


@dataclass(frozen=True)
class Quadrature:
    """Trapezoid lattice for ``S(t)``: spacing ``min(max_spacing, sigma_min(t) / 1.5)``."""

    max_spacing: float = 0.05

    def spacing(self, op, t):
        return min(self.max_spacing, op.sigma_min(t) * _SIGMA_FRACTION)


def _lattice(op, lows, highs, t, quad):
    """Integration lattice covering ``[lows + bt - R0, highs + bt + R0]``; returns axes and spacing."""
    q = quad.spacing(op, t)
    r0 = op.core_radius(t)
    axes = []
    for i in range(op.dim):
        lo = lows[i] + op.b[i] * t - r0
        hi = highs[i] + op.b[i] * t + r0
        n = int(math.ceil((hi - lo) / q))
        axes.append(lo + q * np.arange(n + 1))
    return axes, q


def _lattice_points(axes):
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def semigroup_weights(op, out_points, t, quad=Quadrature(), lattice=None):
    """Quadrature weights ``W`` with ``S(t) g(x_i) ~ sum_j W_ij g(y_j)``.

    Returns ``(W, lattice_points)``.  ``W`` already contains the cell volume.
    """
    out_points = _pts(out_points, op.dim)
    if lattice is None:
        axes, q = _lattice(op, out_points.min(axis=0), out_points.max(axis=0), t, quad)
        ys = _lattice_points(axes)
    else:
        ys, q = lattice
    W = op.kernel_matrix(out_points, ys, t) * q**op.dim
    return W, ys


def apply_semigroup(op, g, t, out, quad=Quadrature()):
    """``S(t) g`` at the nodes of ``out`` (a ``UniformGrid``) or at an ``(N, d)`` point set.

    ``g`` may be an ``AnalyticFunction`` or any vectorised callable (evaluated
    on an automatically sized lattice), or a ``GridFunction`` (interpolated
    with cubic splines; its grid must contain every ``x + bt`` within
    ``R(t)`` of an output point, otherwise ``CoverageError``).  ``S(0) g = g``
    exactly.  Returns a ``GridFunction`` when ``out`` is a grid, else an
    array.
    """
    if t < 0:
        raise DomainError("t must be nonnegative")
    pts = out.points() if isinstance(out, UniformGrid) else _pts(out, op.dim)

    def wrap(vals):
        return GridFunction(out, vals) if isinstance(out, UniformGrid) else vals

    if isinstance(g, GridFunction):
        lo = pts.min(axis=0) + op.b * t - op.core_radius(t)
        hi = pts.max(axis=0) + op.b * t + op.core_radius(t)
        if not g.grid.covers(lo, hi):
            raise CoverageError(
                f"grid {g.grid} does not cover [{lo}, {hi}] needed for S({t}) at radius {op.radius(t):.3g}"
            )
        if t == 0:
            return wrap(g.interpolator()(pts))
        interp = g.interpolator()
        fn = interp
    else:
        fn = g.value if isinstance(g, AnalyticFunction) else g
        if t == 0:
            return wrap(np.asarray(fn(pts), dtype=np.float64).reshape(-1))
    axes, q = _lattice(op, pts.min(axis=0), pts.max(axis=0), t, quad)
    ys = _lattice_points(axes)
    if isinstance(g, GridFunction):
        ys_clipped = np.clip(ys, np.asarray(g.grid.lows), np.asarray(g.grid.highs))
        gy = fn(ys_clipped)
    else:
        gy = np.asarray(fn(ys), dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(gy)):
        raise DomainError("g is not finite on the quadrature lattice")
    out_vals = np.empty(pts.shape[0])
    step = max(1, _BLOCK_ELEMS // max(ys.shape[0], 1))
    for s0 in range(0, pts.shape[0], step):
        W = op.kernel_matrix(pts[s0 : s0 + step], ys, t)
        out_vals[s0 : s0 + step] = (W @ gy) * q**op.dim
    return wrap(out_vals)


def gaussian_semigroup_1d(op, alpha, t, x):
    """Closed form of ``S(t) exp(-alpha x^2)`` in one dimension."""
    a = float(op.a[0, 0])
    b = float(op.b[0])
    s = 1.0 + 4.0 * alpha * a * t
    x = np.asarray(x, dtype=np.float64)
    return math.exp(op.c * t) / math.sqrt(s) * np.exp(-alpha * (x + b * t) ** 2 / s)


def _simpson_weights(t, panels):
    if panels % 2:
        raise ParameterError("Simpson's rule needs an even number of panels")
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (t / panels) / 3.0


@dataclass(frozen=True)
class SemigroupResidual:
    residual: float
    lhs: np.ndarray = field(repr=False)
    points: np.ndarray = field(repr=False)


class _GeneratorImage(AnalyticFunction):
    def __init__(self, op, g):
        self.op, self.g, self.dim = op, g, op.dim

    def value(self, pts):
        return self.op.apply(self.g, pts)


def semigroup_identity_residual(op, g, t, grid, panels=64, quad=Quadrature()):
    """``sup |S(t) g - g - A int_0^t S(s) g ds|`` over grid nodes.

    The ``s``-integral is composite Simpson on ``panels`` panels.  For an
    ``AnalyticFunction`` with derivatives, ``A`` commutes with ``S(s)`` and is
    applied to ``g`` in closed form; otherwise ``A`` acts on the integrated
    grid data by central differences and the residual is taken over interior
    nodes.
    """
    if t < 0:
        raise DomainError("t must be nonnegative")
    pts = grid.points()
    if t == 0:
        return SemigroupResidual(0.0, np.zeros(len(pts)), pts)
    s_nodes = np.linspace(0.0, t, panels + 1)
    w = _simpson_weights(t, panels)
    analytic = isinstance(g, AnalyticFunction) and not isinstance(g, CallableFunction)
    if analytic:
        ag = _GeneratorImage(op, g)
        integral = sum(wk * apply_semigroup(op, ag, sk, pts, quad) for wk, sk in zip(w, s_nodes))
        st = apply_semigroup(op, g, t, pts, quad)
        g0 = apply_semigroup(op, g, 0.0, pts, quad)
        res = st - g0 - integral
        return SemigroupResidual(float(np.max(np.abs(res))), res, pts)
    integral = sum(wk * apply_semigroup(op, g, sk, pts, quad) for wk, sk in zip(w, s_nodes))
    a_int = op.apply_grid(GridFunction(grid, integral))
    inner = a_int.grid.points()
    st = apply_semigroup(op, g, t, inner, quad)
    g0 = apply_semigroup(op, g, 0.0, inner, quad)
    res = st - g0 - a_int.flat
    return SemigroupResidual(float(np.max(np.abs(res))), res, inner)


def adjoint_apply(op, phi, x):
    """``A* phi`` at ``x`` for constant coefficients."""
    return op.adjoint_apply(phi, x)


# ---------------------------------------------------------------- kernel bound


@dataclass(frozen=True)
class KernelBound:
    """Fitted ``|p(x, y, t)| <= C1 t^{-d/2} exp(-C2 |x - y|^2 / t)`` and its held-out verdict."""

    C1: float
    C2: float
    holds: bool


def _bound_sample(op, rng, n, window, t_range):
    t = rng.uniform(t_range[0], t_range[1], n)
    t[0] = t_range[1]
    x = rng.uniform(-window, window, (n, op.dim))
    y = rng.uniform(-window, window, (n, op.dim))
    # diagonal pairs pin down C1
    k = max(1, n // 10)
    y[:k] = x[:k]
    return x, y, t


def kernel_bound_check(op, t_range=(0.05, 1.0), n_samples=4000, window=3.0, seed=0):
    """Fit the Gaussian upper bound on a random sample, then test it on a fresh one.

    ``C1`` is the smallest constant valid for the sample; ``C2`` is then the
    largest exponent rate compatible with that ``C1``.
    """
    lo, hi = t_range
    if not 0 < lo <= hi:
        raise DomainError("t_range must lie in (0, T]")
    rng = np.random.default_rng(seed)
    x, y, t = _bound_sample(op, rng, n_samples, window, t_range)
    logv = op.log_kernel(x, y, t)
    scaled = logv + 0.5 * op.dim * np.log(t)
    log_c1 = float(scaled.max())
    z = np.sum((x - y) ** 2, axis=1) / t
    off = z > 1e-12
    c2 = float(np.min((log_c1 - scaled[off]) / z[off])) if np.any(off) else math.inf
    c2 = max(c2, 0.0)
    xh, yh, th = _bound_sample(op, np.random.default_rng(seed + 1), n_samples, window, t_range)
    logh = op.log_kernel(xh, yh, th)
    zh = np.sum((xh - yh) ** 2, axis=1) / th
    bound = log_c1 - 0.5 * op.dim * np.log(th) - c2 * zh
    holds = bool(np.all(logh <= bound + 1e-9))
    return KernelBound(math.exp(log_c1), c2, holds)


# ---------------------------------------------------------------- evolved test functions


@dataclass(frozen=True)
class EvolvedFunction:
    """``psi_{t,s} = S(t - s) phi`` on a grid, with ``d psi / ds = -S(t - s) A phi``."""

    op: EllipticOperator
    phi: AnalyticFunction
    t: float
    s: float
    grid: UniformGrid
    values: GridFunction
    ds_values: GridFunction

    def generator_residual(self, eps=1e-4, quad=Quadrature()):
        """``sup |A psi + d psi/ds|`` with ``A`` by central differences and ``d/ds`` by a
        central difference quotient, over interior nodes."""
        inner = self.grid.trimmed(1)
        lag = self.t - self.s
        plus = apply_semigroup(self.op, self.phi, lag - eps, inner, quad).flat
        minus = apply_semigroup(self.op, self.phi, lag + eps, inner, quad).flat
        ds = (plus - minus) / (2 * eps)
        a_psi = self.op.apply_grid(self.values).flat
        return float(np.max(np.abs(a_psi + ds)))


def evolved_test_function(op, phi, t, s, grid, quad=Quadrature()):
    if not s < t:
        raise DomainError("need s < t")
    vals = apply_semigroup(op, phi, t - s, grid, quad)
    ds = apply_semigroup(op, _GeneratorImage(op, phi), t - s, grid, quad)
    return EvolvedFunction(op, phi, t, s, grid, vals, GridFunction(grid, -ds.values))


# ---------------------------------------------------------------- Crank-Nicolson oracle


def crank_nicolson(op, initial, grid, times, dt=1e-3, forcing=None, pad=None):
    """Finite-difference solution of ``u_t = A u + F(x, t)``, ``u(., 0) = initial``, in one dimension.

    The computational domain is ``grid`` widened by ``pad`` on both sides
    (default ``R(T)``) with reflecting (Neumann) ends, so boundary effects do
    not reach the reported nodes.  ``times`` must be multiples of ``dt``.
    Returns an array of shape ``(len(times), grid.size)``.

    ``initial(x)`` and ``forcing(x, t)`` take and return 1-D arrays.
    """
    if op.dim != 1 or grid.dim != 1:
        raise ParameterError("the finite-difference oracle is one-dimensional")
    times = np.asarray(times, dtype=np.float64)
    steps = np.rint(times / dt).astype(np.int64)
    if np.any(np.abs(steps * dt - times) > 1e-9) or np.any(steps < 0):
        raise GridError("times must be nonnegative multiples of dt")
    h = grid.h
    pad = op.radius(float(times.max(initial=0.0))) + 1.0 if pad is None else pad
    k = int(math.ceil(pad / h))
    x = grid.lows[0] - k * h + h * np.arange(grid.shape[0] + 2 * k)
    n = x.size
    a, b, c = float(op.a[0, 0]), float(op.b[0]), op.c
    lower = np.full(n, a / h**2 - b / (2 * h))
    upper = np.full(n, a / h**2 + b / (2 * h))
    diag = np.full(n, -2 * a / h**2 + c)
    # ghost nodes mirror the first interior ones: u_{-1} = u_1, u_n = u_{n-2}
    upper[0] = 2 * a / h**2
    lower[-1] = 2 * a / h**2

    def L(u):
        out = diag * u
        out[1:] += lower[1:] * u[:-1]
        out[:-1] += upper[:-1] * u[1:]
        return out

    u = np.asarray(initial(x), dtype=np.float64).copy()
    r = 0.5 * dt
    lhs_lower, lhs_diag, lhs_upper = -r * lower, 1.0 - r * diag, -r * upper
    out = np.empty((times.size, grid.shape[0]))
    order = np.argsort(steps)
    step = 0
    f_now = forcing(x, 0.0) if forcing is not None else None
    for idx in order:
        while step < steps[idx]:
            rhs = u + r * L(u)
            if forcing is not None:
                f_next = forcing(x, (step + 1) * dt)
                rhs = rhs + r * (f_now + f_next)
                f_now = f_next
            u = K.tridiag_solve(lhs_lower, lhs_diag, lhs_upper, rhs)
            step += 1
        out[idx] = u[k : k + grid.shape[0]]
    return out


@dataclass(frozen=True)
class KernelValidationRow:
    t: float
    rel_linf: float
    mass_error: float
    argmax_offset: float


def kernel_validation(op, ts=(0.1, 0.5), h=0.05, dt=1e-3, t0=0.02, y0=0.0, half_width=None, quad=Quadrature()):
    """Closed-form kernel against the Crank-Nicolson oracle.

    The oracle starts from the closed-form ``x -> p(x, y0, t0)`` (a point mass
    cannot be represented on a grid) and evolves it over ``t - t0``; by the
    semigroup property it must reproduce ``x -> p(x, y0, t)``.  The report
    also holds the mass error ``|int p(x, y, t) dy - e^{ct}|`` and the offset
    between ``argmax_y p(x, y, t)`` and ``x + bt``.
    """
    if op.dim != 1:
        raise ParameterError("kernel validation runs in one dimension")
    ts = [float(t) for t in ts]
    if half_width is None:
        half_width = max(op.radius(max(ts)), 1.0) + abs(float(op.b[0])) * max(ts)
    half_width = h * math.ceil(half_width / h)
    grid = UniformGrid.symmetric(half_width, h)
    xs = grid.axes[0]
    lags = [t - t0 for t in ts]
    fd = crank_nicolson(op, lambda x: op.kernel(x, y0, t0), grid, lags, dt=dt)
    rows = []
    for t, u in zip(ts, fd):
        exact = op.kernel(xs, y0, t)
        rel = float(np.max(np.abs(u - exact)) / np.max(np.abs(exact)))
        mass = float(apply_semigroup(op, Constant(1.0, 1), t, np.array([[0.0]]), quad)[0])
        ys = np.linspace(-half_width, half_width, 20001)
        peak = ys[np.argmax(op.kernel(np.zeros(1), ys, t))]
        rows.append(KernelValidationRow(t, rel, abs(mass - math.exp(op.c * t)), float(peak - float(op.b[0]) * t)))
    return rows
