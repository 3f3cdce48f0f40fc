"""Riemann integrals of random functions, taken as limits in probability.

A random function is modelled by ``RandomField``: a map from points of
``R^d`` to ensembles over one ``ProbSpace``, evaluated in batches.  Its
integral over a box is approximated by tagged sums ``sum_k xi(x_k) m(B_k)``
over dyadic partitions.  Because "the limit exists" cannot be tested
directly, a result is *accepted* when two successive refinements move it by at
most ``tol`` in the Ky Fan metric and a second tag rule lands within ``tol``
of the first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import AlignmentError, DomainError, ParameterError, PreconditionError, ResourceError
from .prob import Ensemble, ky_fan

MAX_LEVEL_PER_AXIS = 12
MAX_CELLS_LOG2 = 20
TAG_RULES = ("left", "center", "right", "random")
# (M x chunk) doubles per evaluation batch
_BATCH_ELEMS = 1 << 22


# ---------------------------------------------------------------- geometry


@dataclass(frozen=True)
class Box:
    """Axis-aligned closed box ``prod [lows_i, highs_i]``."""

    lows: tuple
    highs: tuple

    def __post_init__(self):
        lows = tuple(float(v) for v in np.atleast_1d(self.lows))
        highs = tuple(float(v) for v in np.atleast_1d(self.highs))
        if len(lows) != len(highs):
            raise DomainError("lows and highs differ in length")
        if any(b < a for a, b in zip(lows, highs)):
            raise DomainError(f"box with a_i > b_i: {lows} {highs}")
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)

    @classmethod
    def interval(cls, a, b):
        return cls((a,), (b,))

    @classmethod
    def cube(cls, a, b, dim):
        return cls((a,) * dim, (b,) * dim)

    @property
    def dim(self):
        return len(self.lows)

    @property
    def volume(self):
        """Jordan content ``prod (b_i - a_i)``."""
        return float(np.prod(np.subtract(self.highs, self.lows)))

    def product(self, other):
        return Box(self.lows + other.lows, self.highs + other.highs)

    def split(self, axis, at):
        if not self.lows[axis] <= at <= self.highs[axis]:
            raise DomainError("split point outside the box")
        hi = list(self.highs)
        lo = list(self.lows)
        hi[axis] = at
        lo[axis] = at
        return Box(self.lows, tuple(hi)), Box(tuple(lo), self.highs)

    def contains(self, other):
        return all(a <= c and d <= b for a, b, c, d in zip(self.lows, self.highs, other.lows, other.highs))

    def sub_boxes(self, splits):
        """Lattice of grid-aligned sub-boxes: every ``[e_i, e_j]`` per axis with ``splits`` equal parts."""
        per_axis = []
        for a, b in zip(self.lows, self.highs):
            edges = np.linspace(a, b, splits + 1)
            per_axis.append([(edges[i], edges[j]) for i in range(splits) for j in range(i + 1, splits + 1)])
        out = []
        for combo in np.ndindex(*[len(p) for p in per_axis]):
            ivs = [per_axis[k][c] for k, c in enumerate(combo)]
            out.append(Box(tuple(v[0] for v in ivs), tuple(v[1] for v in ivs)))
        return out


@dataclass(frozen=True, eq=False)
class TaggedPartition:
    """Dyadic partition of a box into equal cells, one tag point per cell."""

    box: Box
    level: int
    rule: str
    lows: np.ndarray = field(repr=False)
    tags: np.ndarray = field(repr=False)
    widths: np.ndarray = field(repr=False)

    @property
    def cell_count(self):
        return self.tags.shape[0]

    @property
    def cell_volume(self):
        return float(np.prod(self.widths))

    @property
    def volumes(self):
        return np.full(self.cell_count, self.cell_volume)

    @property
    def mesh(self):
        """Largest cell diameter."""
        return float(np.sqrt(np.sum(self.widths**2)))


def _check_budget(dim, level):
    if level > MAX_LEVEL_PER_AXIS or dim * level > MAX_CELLS_LOG2:
        raise ResourceError(
            f"level {level} in dimension {dim} exceeds the budget "
            f"(<= {MAX_LEVEL_PER_AXIS} per axis, <= 2**{MAX_CELLS_LOG2} cells)"
        )


def dyadic_partition(box, level, rule="center", seed=0):
    """Split every axis of ``box`` into ``2**level`` equal parts and tag each cell."""
    if rule not in TAG_RULES:
        raise ParameterError(f"unknown tag rule {rule!r}")
    _check_budget(box.dim, level)
    m = 1 << level
    edges = [np.linspace(a, b, m + 1) for a, b in zip(box.lows, box.highs)]
    lo_axes = [e[:-1] for e in edges]
    if rule == "left":
        tag_axes = lo_axes
    elif rule == "right":
        tag_axes = [e[1:] for e in edges]
    else:
        tag_axes = [0.5 * (e[:-1] + e[1:]) for e in edges]
    lows = np.stack([g.ravel() for g in np.meshgrid(*lo_axes, indexing="ij")], axis=1)
    tags = np.stack([g.ravel() for g in np.meshgrid(*tag_axes, indexing="ij")], axis=1)
    widths = np.array([(b - a) / m for a, b in zip(box.lows, box.highs)])
    if rule == "random":
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(level), box.dim]))
        tags = lows + rng.random(lows.shape) * widths
    return TaggedPartition(box, level, rule, lows, tags, widths)


# ---------------------------------------------------------------- random fields


def _as_points(points, dim):
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(-1, 1) if dim == 1 else pts.reshape(1, -1)
    if pts.shape[1] != dim:
        raise DomainError(f"expected points of dimension {dim}, got shape {pts.shape}")
    return pts


class RandomField:
    """A random function ``xi : R^d -> L0`` evaluated in batches.

    ``sampler(points)`` receives an ``(N, d)`` array and must return the
    ``(M, N)`` matrix of samples, path ``k`` being outcome ``k`` of the
    underlying ``ProbSpace``.
    """

    deterministic = False

    def __init__(self, sampler, space_id, path_count, dim=1, name="field"):
        self._sampler = sampler
        self.space_id = space_id
        self.path_count = int(path_count)
        self.dim = int(dim)
        self.name = name

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r}, dim={self.dim}, M={self.path_count})"

    def sample(self, points):
        pts = _as_points(points, self.dim)
        out = np.asarray(self._sampler(pts), dtype=np.float64)
        if out.shape != (self.path_count, pts.shape[0]):
            raise DomainError(f"sampler returned {out.shape}, expected {(self.path_count, pts.shape[0])}")
        return out

    def __call__(self, x):
        return Ensemble(self.sample(_as_points(x, self.dim)[:1])[:, 0], self.space_id)

    def _check(self, other):
        if other.space_id != self.space_id:
            raise AlignmentError("fields live on different probability spaces")
        if other.dim != self.dim:
            raise DomainError("fields have different dimensions")

    def weighted(self, fn, name=None):
        """The field ``x -> fn(x) * xi(x)`` for a deterministic ``fn``."""
        base = self

        def sampler(pts):
            w = np.asarray(fn(pts), dtype=np.float64).reshape(-1)
            return base.sample(pts) * w[None, :]

        return RandomField(sampler, self.space_id, self.path_count, self.dim, name or f"w*{self.name}")

    def scaled(self, c):
        return self.weighted(lambda pts: np.full(pts.shape[0], float(c)), name=f"{c}*{self.name}")

    def __add__(self, other):
        self._check(other)
        a, b = self, other
        return RandomField(
            lambda pts: a.sample(pts) + b.sample(pts), self.space_id, self.path_count, self.dim, f"{a.name}+{b.name}"
        )

    def __sub__(self, other):
        self._check(other)
        a, b = self, other
        return RandomField(
            lambda pts: a.sample(pts) - b.sample(pts), self.space_id, self.path_count, self.dim, f"{a.name}-{b.name}"
        )

    @classmethod
    def deterministic_field(cls, fn, ps, dim=1, name="det"):
        return DeterministicField(fn, ps.space_id, ps.path_count, dim, name)

    @classmethod
    def from_function(cls, fn, ps, dim=1, name="field"):
        """Wrap ``fn(points) -> (M, N)``."""
        return cls(fn, ps.space_id, ps.path_count, dim, name)


class DeterministicField(RandomField):
    """A non-random function viewed as a random field (same value on every path)."""

    deterministic = True

    def __init__(self, fn, space_id, path_count, dim=1, name="det"):
        self.fn = fn
        super().__init__(self._broadcast, space_id, path_count, dim, name)

    def values(self, pts):
        return np.asarray(self.fn(pts), dtype=np.float64).reshape(-1)

    def _broadcast(self, pts):
        return np.broadcast_to(self.values(pts), (self.path_count, pts.shape[0]))

    def weighted(self, fn, name=None):
        base = self.fn
        return DeterministicField(
            lambda pts: np.asarray(fn(pts), dtype=np.float64).reshape(-1) * np.asarray(base(pts), dtype=np.float64).reshape(-1),
            self.space_id,
            self.path_count,
            self.dim,
            name or f"w*{self.name}",
        )


class FactorField(RandomField):
    """Finite-rank field ``xi(x) = sum_r Z_r g_r(x)`` with random ``Z_r`` and deterministic ``g_r``.

    ``coeffs`` has shape ``(M, R)``; ``funcs`` are ``R`` callables taking
    ``(N, d)`` points.  Linear operators act on the ``g_r`` alone, which is
    what makes such fields cheap to propagate.
    """

    def __init__(self, coeffs, funcs, space_id, dim=1, name="factor"):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.ndim == 1:
            coeffs = coeffs[:, None]
        if coeffs.shape[1] != len(funcs):
            raise DomainError("one coefficient column per basis function")
        self.coeffs = coeffs
        self.funcs = tuple(funcs)
        super().__init__(self._eval, space_id, coeffs.shape[0], dim, name)

    def basis(self, pts):
        return np.stack([np.asarray(g(pts), dtype=np.float64).reshape(-1) for g in self.funcs])

    def _eval(self, pts):
        return self.coeffs @ self.basis(pts)


class DriverPathField(RandomField):
    """``v -> mu([0, v])`` of a driver, linearly interpolated between grid points."""

    def __init__(self, driver, name=None):
        self.driver = driver
        self._path = driver.path()
        super().__init__(self._eval, driver.space_id, driver.path_count, 1, name or f"{driver.kind}-path")

    def _eval(self, pts):
        d = self.driver
        t = pts[:, 0]
        if np.any(t < -1e-12) or np.any(t > d.T * (1 + 1e-12)):
            raise DomainError("time outside [0, T]")
        pos = np.clip(t / d.dt, 0.0, d.n)
        idx = np.minimum(np.floor(pos).astype(np.int64), d.n - 1)
        return K.gather_lerp(self._path, idx, pos - idx)


class StochasticIntegralField(RandomField):
    """``x -> int_0^T h(x, s) dmu(s)`` with left-point sums at a fixed driver level.

    ``h(points, s)`` takes ``(N, d)`` points and ``(K,)`` times and returns
    an ``(N, K)`` array.
    """

    def __init__(self, driver, h, level=None, dim=1, name="int h dmu"):
        self.driver = driver
        self.h = h
        self.level = driver.log2_n if level is None else int(level)
        self._inc = driver.aggregated(self.level)
        self._s = driver.grid(self.level)[:-1]
        super().__init__(self._eval, driver.space_id, driver.path_count, dim, name)

    def _eval(self, pts):
        w = np.asarray(self.h(pts, self._s), dtype=np.float64)
        if not np.all(np.isfinite(w)):
            raise PreconditionError("integrand is not bounded")
        return K.row_dot(self._inc, w.T)


# ---------------------------------------------------------------- tagged sums


def _chunk(path_count):
    return max(64, _BATCH_ELEMS // max(path_count, 1))


def tagged_sum(field_, partition):
    """``sum_k xi(x_k) m(B_k)`` per path, shape ``(M,)``.

    Cells are processed in fixed-size batches so the summation order depends
    only on ``M`` and the partition.
    """
    if partition.box.dim != field_.dim:
        raise DomainError("partition and field dimensions differ")
    vol = partition.cell_volume
    tags = partition.tags
    if getattr(field_, "deterministic", False):
        total = float(np.sum(field_.values(tags))) * vol
        return np.full(field_.path_count, total)
    step = _chunk(field_.path_count)
    acc = np.zeros(field_.path_count)
    for start in range(0, tags.shape[0], step):
        block = field_.sample(tags[start : start + step])
        acc += K.weighted_rows(block, np.full(block.shape[1], vol))
    return acc


@dataclass(frozen=True)
class ConvergenceReport:
    """Evidence that a sequence of approximations has a limit in probability.

    ``distances[i]`` is the Ky Fan distance between the approximations at
    ``levels[i]`` and ``levels[i + 1]``; ``cross_check`` compares the finest
    approximation with one built from a different tag rule (or, for improper
    integrals, the cross-check of the largest box).
    """

    levels: tuple
    distances: tuple
    cross_check: float
    tol: float
    tag_rule: str = "center"
    cross_rule: str = "left"
    sub_reports: tuple = ()

    @property
    def accepted(self):
        if len(self.distances) < 2:
            return False
        ok = all(d <= self.tol for d in self.distances[-2:]) and self.cross_check <= self.tol
        if self.sub_reports:
            ok = ok and self.sub_reports[-1].accepted
        return ok

    @property
    def verdict(self):
        return "accepted" if self.accepted else "rejected"


def riemann_integral(
    f, box, max_level=8, tol=0.02, *, tag_rule="center", cross_rule="left", n_levels=4, seed=0
):
    """Integral of a random field over a box as a limit of tagged sums.

    Parameters
    ----------
    f : RandomField
    box : Box
    max_level : int
        Finest dyadic level per axis (``2**max_level`` cells per axis).
    tol : float
        Ky Fan tolerance for the Cauchy and tag-rule checks.
    tag_rule, cross_rule : str
        Tag rules for the reported sums and for the cross-check.
    n_levels : int
        How many consecutive levels (ending at ``max_level``) to evaluate.

    Returns
    -------
    (Ensemble, ConvergenceReport)
        The finest-level sum and the evidence.  Non-convergence is reported,
        not raised.
    """
    if box.dim != f.dim:
        raise DomainError("box and field dimensions differ")
    _check_budget(box.dim, max_level)
    if n_levels < 3:
        raise ParameterError("need at least three levels to judge convergence")
    first = max(0, max_level - n_levels + 1)
    levels = tuple(range(first, max_level + 1))
    if len(levels) < 3:
        raise ParameterError("max_level too small to judge convergence")
    sums = [tagged_sum(f, dyadic_partition(box, L, tag_rule, seed)) for L in levels]
    distances = tuple(ky_fan(b - a) for a, b in zip(sums[:-1], sums[1:]))
    cross = tagged_sum(f, dyadic_partition(box, max_level, cross_rule, seed + 1))
    report = ConvergenceReport(levels, distances, ky_fan(cross - sums[-1]), tol, tag_rule, cross_rule)
    return Ensemble(sums[-1], f.space_id), report


def product_integral(f, B, S, max_level=7, tol=0.02, **kwargs):
    """Integral of a field on ``B x S`` with respect to ``dx x ds``."""
    return riemann_integral(f, B.product(S), max_level, tol, **kwargs)


# ---------------------------------------------------------------- improper integrals


@dataclass(frozen=True)
class Exhaustion:
    """Growing boxes ``B_j`` whose union is an unbounded domain.

    Axis ``i`` of ``B_j`` is ``[center_i - L_j, center_i + L_j]`` or, when
    ``lower[i]`` is set, ``[lower_i, lower_i + L_j]``; ``L_j = L_0 g**j``
    with growth ``g = 2`` by default.  Box ``j`` is partitioned at level
    ``base_level + ceil(j log2 g)`` so cells never get coarser as the boxes
    grow.
    """

    dim: int = 1
    base_half_width: float = 1.0
    n_boxes: int = 4
    base_level: int = 6
    center: tuple = None
    lower: tuple = None
    growth: float = 2.0

    def __post_init__(self):
        if not self.growth > 1:
            raise ParameterError("growth factor must exceed 1")
        if not self.base_half_width > 0:
            raise ParameterError("base half width must be positive")

    def half_width(self, j):
        return self.base_half_width * self.growth**j

    def box(self, j):
        L = self.half_width(j)
        center = (0.0,) * self.dim if self.center is None else tuple(self.center)
        lower = (None,) * self.dim if self.lower is None else tuple(self.lower)
        lows, highs = [], []
        for c, lo in zip(center, lower):
            if lo is None:
                lows.append(c - L)
                highs.append(c + L)
            else:
                lows.append(lo)
                highs.append(lo + L)
        return Box(tuple(lows), tuple(highs))

    @property
    def boxes(self):
        return [self.box(j) for j in range(self.n_boxes)]

    def level(self, j):
        return self.base_level + int(math.ceil(j * math.log2(self.growth) - 1e-12))

    def covers(self, radius):
        """Whether the last box contains every point of the domain within ``radius`` of the centre."""
        return self.half_width(self.n_boxes - 1) >= radius


def improper_integral(f, exhaustion, tol=0.02, **kwargs):
    """Integral over an unbounded domain as the limit over exhaustion boxes."""
    if exhaustion.dim != f.dim:
        raise DomainError("exhaustion and field dimensions differ")
    if exhaustion.n_boxes < 3:
        raise ParameterError("need at least three exhaustion boxes")
    values, reports = [], []
    for j, box in enumerate(exhaustion.boxes):
        val, rep = riemann_integral(f, box, exhaustion.level(j), tol, **kwargs)
        values.append(val)
        reports.append(rep)
    distances = tuple(ky_fan(b - a) for a, b in zip(values[:-1], values[1:]))
    report = ConvergenceReport(
        tuple(range(exhaustion.n_boxes)),
        distances,
        reports[-1].cross_check,
        tol,
        reports[-1].tag_rule,
        reports[-1].cross_rule,
        tuple(reports),
    )
    return values[-1], report


# ---------------------------------------------------------------- derived fields


class IndefiniteIntegralField(RandomField):
    """``u -> int_a^u xi(v) dv`` on ``[a, b]``.

    One fine partition ``C_i`` of ``[a, b]`` is fixed and
    ``eta(u) = sum_i m(C_i cap [a, u]) xi(v_i)``, so every ``u`` reuses the
    same evaluations of ``xi``.
    """

    def __init__(self, f, a, b, level=8, rule="center", name=None):
        if f.dim != 1:
            raise DomainError("indefinite integrals are one-dimensional")
        part = dyadic_partition(Box.interval(a, b), level, rule)
        self.a, self.b = float(a), float(b)
        self.h = float(part.widths[0])
        self.n_cells = part.cell_count
        vals = np.ascontiguousarray(f.sample(part.tags))
        prefix = np.zeros((f.path_count, self.n_cells + 1))
        np.cumsum(vals * self.h, axis=1, out=prefix[:, 1:])
        self._vals = vals
        self._prefix = prefix
        super().__init__(self._eval, f.space_id, f.path_count, 1, name or f"int {f.name}")

    def _eval(self, pts):
        u = pts[:, 0]
        if np.any(u < self.a - 1e-12) or np.any(u > self.b + 1e-12):
            raise DomainError("point outside the integration interval")
        pos = np.clip((u - self.a) / self.h, 0.0, self.n_cells)
        j = np.minimum(np.floor(pos).astype(np.int64), self.n_cells - 1)
        partial = (pos - j) * self.h
        return self._prefix[:, j] + self._vals[:, j] * partial[None, :]


class SliceIntegralField(RandomField):
    """Partial integral of a field on a product space.

    With ``over="inner"`` the trailing ``inner.dim`` coordinates are integrated
    out, giving ``x -> int_S f(x, s) ds``; with ``over="outer"`` the leading
    ones, giving ``s -> int_B f(x, s) dx``.  Each slice integral is a tagged
    sum at ``level``.
    """

    def __init__(self, f, region, over="inner", level=7, rule="center", name=None):
        if over not in ("inner", "outer"):
            raise ParameterError("over must be 'inner' or 'outer'")
        self.f = f
        self.over = over
        self.part = dyadic_partition(region, level, rule)
        super().__init__(self._eval, f.space_id, f.path_count, f.dim - region.dim, name or f"slice {f.name}")

    def _eval(self, pts):
        tags = self.part.tags
        ni = tags.shape[0]
        n = pts.shape[0]
        out = np.empty((self.path_count, n))
        step = max(1, _BATCH_ELEMS // max(self.path_count * ni, 1))
        w = np.full(ni, self.part.cell_volume)
        for start in range(0, n, step):
            blk = pts[start : start + step]
            nb_ = blk.shape[0]
            rep = np.repeat(blk, ni, axis=0)
            til = np.tile(tags, (nb_, 1))
            joint = np.hstack([rep, til]) if self.over == "inner" else np.hstack([til, rep])
            vals = self.f.sample(joint).reshape(self.path_count * nb_, ni)
            out[:, start : start + nb_] = K.weighted_rows(vals, w).reshape(self.path_count, nb_)
        return out


# ---------------------------------------------------------------- deterministic quadrature


def classical_integral(fn, box, order=16, panels=8):
    """Composite Gauss-Legendre integral of a deterministic function over a box.

    ``fn(points)`` may return ``(N,)`` or ``(N, K)``; the result drops the
    point axis.
    """
    nodes, weights = np.polynomial.legendre.leggauss(order)
    axes_x, axes_w = [], []
    for a, b in zip(box.lows, box.highs):
        edges = np.linspace(a, b, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        axes_x.append((mid[:, None] + half[:, None] * nodes[None, :]).ravel())
        axes_w.append((half[:, None] * weights[None, :]).ravel())
    grids = np.meshgrid(*axes_x, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wgrid = np.meshgrid(*axes_w, indexing="ij")
    w = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
    vals = np.asarray(fn(pts), dtype=np.float64)
    return np.tensordot(w, vals, axes=(0, 0))


# ---------------------------------------------------------------- a non-integrable field

K_MAX = 20


class PathologicalField(RandomField):
    """Stochastically continuous on ``[0, 1]`` yet not integrable.

    ``xi_k = base**k 1_{F_k}`` with independent ``F_k``, ``P(F_k) = 1/k``.
    ``xi = xi_k`` on the plateau ``[2**(-2k-1), 2**(-2k)]`` and is linear on
    ``[2**(-2k-2), 2**(-2k-1)]`` between ``xi_{k+1}`` and ``xi_k``;
    ``xi(0) = 0``.  Levels above ``k_max`` are set to zero.  On ``[1/4, 1]``,
    where the recipe would need an undefined ``xi_0``, the field equals
    ``xi_1``.
    """

    def __init__(self, ps, base=5.0, k_max=K_MAX, tag="pathological"):
        self.base = float(base)
        self.k_max = int(k_max)
        u = ps.uniform(tag, (self.k_max,))
        k = np.arange(1, self.k_max + 1)
        hits = u < 1.0 / k
        xi = np.where(hits, self.base ** k.astype(np.float64), 0.0)
        # level index k holds xi_k; index 0 doubles xi_1, index k_max+1 is the zero tail
        levels = np.zeros((ps.path_count, self.k_max + 2))
        levels[:, 1 : self.k_max + 1] = xi
        levels[:, 0] = levels[:, 1]
        self.levels = levels
        self.hits = hits
        super().__init__(self._eval, ps.space_id, ps.path_count, 1, "pathological")

    def plateau(self, k):
        return Box.interval(2.0 ** (-2 * k - 1), 2.0 ** (-2 * k))

    def _eval(self, pts):
        x = pts[:, 0]
        if np.any(x < 0) or np.any(x > 1):
            raise DomainError("the pathological field lives on [0, 1]")
        out = np.zeros((self.path_count, x.size))
        pos = x > 0
        xp = x[pos]
        e = -np.log2(xp)
        k = np.floor(e / 2).astype(np.int64)
        frac = e - 2 * k
        top = self.k_max + 1
        kc = np.minimum(k, top)
        k1 = np.minimum(k + 1, top)
        on_plateau = frac <= 1.0
        # weights of xi_k and xi_{k+1} on the linear segment
        scale = 2.0 ** (2 * k + 2)
        wk = np.where(on_plateau, 1.0, scale * (xp - 2.0 ** (-2 * k - 2)))
        wk1 = np.where(on_plateau, 0.0, scale * (2.0 ** (-2 * k - 1) - xp))
        vals = self.levels[:, kc] * wk + self.levels[:, k1] * wk1
        vals[:, k > self.k_max] = 0.0
        out[:, pos] = vals
        return out


def build_pathological_field(ps, base=5.0, k_max=K_MAX):
    return PathologicalField(ps, base=base, k_max=k_max)


@dataclass(frozen=True)
class PathologicalRow:
    n: int
    ky_fan: float
    ky_fan_closed_form: float
    report: ConvergenceReport


def pathological_demo(ps, n_max=8, base=5.0, tol=0.02):
    """Quasi-norms of ``(1/n) int_{A_n} xi dx`` with ``A_n`` the union of the first ``n`` plateaus.

    Each plateau integral goes through ``riemann_integral``; the closed-form
    plateau sum ``sum_k xi_k 2**(-2k-1)`` is reported alongside.  For an
    integrable field these values would have to vanish; here they stay above
    a positive floor.
    """
    if not 1 <= n_max <= 12:
        raise PreconditionError("n_max must lie in [1, 12]")
    field_ = build_pathological_field(ps, base=base)
    rows = []
    running = np.zeros(ps.path_count)
    closed = np.zeros(ps.path_count)
    for n in range(1, n_max + 1):
        val, rep = riemann_integral(field_, field_.plateau(n), max_level=3, tol=tol)
        running = running + val.samples
        closed = closed + field_.levels[:, n] * 2.0 ** (-2 * n - 1)
        rows.append(PathologicalRow(n, ky_fan(running / n), ky_fan(closed / n), rep))
    return rows


def stochastic_continuity(f, x, offsets):
    """``ky_fan(xi(x) - xi(x + d))`` for each offset ``d``."""
    pts = np.concatenate([[x], x + np.asarray(offsets, dtype=np.float64)])
    vals = f.sample(pts)
    return [ky_fan(vals[:, 0] - vals[:, i]) for i in range(1, pts.size)]
