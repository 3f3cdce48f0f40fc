"""Both sides of the interchange and integration-by-parts identities.

Each function builds the two sides through independent pipelines that share
one realisation of the randomness, so the reported Ky Fan residual measures
discretisation error rather than Monte Carlo mismatch.  When a Riemann
integral on either side is not accepted by its convergence report the
identity cannot be judged and ``InconclusiveError`` is raised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .drivers import integrate_det_many
from .errors import DomainError, GridError, InconclusiveError, PreconditionError
from .prob import Ensemble, ky_fan
from .riemann import (
    Box,
    Exhaustion,
    IndefiniteIntegralField,
    SliceIntegralField,
    StochasticIntegralField,
    classical_integral,
    improper_integral,
    riemann_integral,
)


# the inner integral of nested pipelines uses a finer partition than the outer one,
# so the two sides of an identity are not algebraically the same sum
INNER_EXTRA_LEVELS = 2


@dataclass(frozen=True)
class IdentityResidual:
    """``residual = ky_fan(lhs - rhs)`` plus the residual at coarser levels.

    ``trace`` holds ``(level, residual)`` pairs, finest last.
    """

    name: str
    lhs: Ensemble
    rhs: Ensemble
    residual: float
    threshold: float
    trace: tuple = ()
    reports: tuple = ()

    @property
    def holds(self):
        return self.residual <= self.threshold

    def non_increasing(self, slack=0.0):
        """Whether the residual never grows by more than ``slack`` along the trace."""
        vals = [r for _, r in self.trace]
        return all(b <= a + slack for a, b in zip(vals[:-1], vals[1:]))


def default_threshold(tol, path_count):
    """``max(tol, 2/sqrt(M))``: below ``2/sqrt(M)`` the empirical metric cannot resolve."""
    return max(float(tol), 2.0 / math.sqrt(path_count))


def _require(report, what, enforce=True):
    if enforce and not report.accepted:
        raise InconclusiveError(f"{what}: Riemann sums did not settle ({report})", report)


def _levels(level, n_trace):
    # only the finest level has to pass its convergence check; coarser ones feed the trace
    return list(range(max(1, level - n_trace + 1), level + 1))


def _conv_tol(tol, path_count):
    # inner Riemann integrals are judged at the same resolution as the residual
    return default_threshold(tol, path_count)


def _finish(name, lhs, rhs, trace, reports, tol):
    threshold = default_threshold(tol, len(lhs))
    return IdentityResidual(name, lhs, rhs, ky_fan(lhs - rhs), threshold, tuple(trace), tuple(reports))


# ---------------------------------------------------------------- stochastic Fubini


def _check_driver_level(d, level):
    if level > d.log2_n:
        raise GridError(f"level {level} is finer than the driver grid (2**{d.log2_n} cells)")


def _inner_dx(h, region, s, panels=None):
    """``s -> int_region h(x, s) dx`` by Gauss-Legendre, for a vector of ``s``."""
    if panels is None:
        widest = max(b - a for a, b in zip(region.lows, region.highs))
        panels = max(8, int(math.ceil(widest / 0.25)))
    return classical_integral(lambda pts: h(pts, s), region, panels=panels)


def fubini_residual(d, h, B, level=8, tol=0.02, n_trace=3):
    """``int_B dx int_0^T h(x, s) dmu(s)`` against ``int_0^T dmu(s) int_B h(x, s) dx``.

    The left side is a Riemann integral over ``B`` of the random field
    ``x -> int h(x, s) dmu(s)``; the right side integrates the deterministic
    function ``s -> int_B h(x, s) dx`` against the driver.  Spatial and time
    grids are refined together; ``trace`` covers the last ``n_trace`` levels.

    ``h(points, s)`` maps ``(N, d)`` points and ``(K,)`` times to ``(N, K)``.
    It must be dominated by a bounded ``g(s)``; that is the caller's
    responsibility.
    """
    _check_driver_level(d, level)
    ctol = _conv_tol(tol, d.path_count)
    trace, reports = [], []
    lhs = rhs = None
    for L in _levels(level, n_trace):
        field_ = StochasticIntegralField(d, h, level=L, dim=B.dim)
        lhs, rep = riemann_integral(field_, B, max_level=L, tol=ctol)
        _require(rep, "fubini left side", L == level)
        s = d.grid(L)[:-1]
        g = _inner_dx(h, B, s)
        rhs = Ensemble(integrate_det_many(d, g[:, None], L)[:, 0], d.space_id)
        trace.append((L, ky_fan(lhs - rhs)))
        reports.append(rep)
    return _finish("fubini", lhs, rhs, trace, reports, tol)


def fubini_improper_residual(d, h, exhaustion, level=None, tol=0.02):
    """Improper-domain version of ``fubini_residual``.

    The left side is the improper Riemann integral of ``x -> int h(x, s)
    dmu(s)`` over the exhaustion; the right side integrates ``s -> int h(x,
    s) dx`` (over the largest box) against the driver.  ``trace`` is indexed
    by exhaustion box.
    """
    level = d.log2_n if level is None else level
    _check_driver_level(d, level)
    ctol = _conv_tol(tol, d.path_count)
    field_ = StochasticIntegralField(d, h, level=level, dim=exhaustion.dim)
    lhs, rep = improper_integral(field_, exhaustion, tol=ctol)
    _require(rep, "improper fubini left side")
    s = d.grid(level)[:-1]
    trace = []
    rhs = None
    for j, box in enumerate(exhaustion.boxes):
        g = _inner_dx(h, box, s)
        rhs_j = Ensemble(integrate_det_many(d, g[:, None], level)[:, 0], d.space_id)
        lhs_j = lhs if j == exhaustion.n_boxes - 1 else None
        if lhs_j is None:
            lhs_j, _ = riemann_integral(field_, box, exhaustion.level(j), ctol)
        trace.append((j, ky_fan(lhs_j - rhs_j)))
        rhs = rhs_j
    return _finish("fubini_improper", lhs, rhs, trace, (rep,), tol)


# ---------------------------------------------------------------- product vs iterated


def _improper_product(f, exhaustion, S, tol):
    """Product integral over ``(union of B_j) x S`` as the limit over ``B_j x S``."""
    values, reports = [], []
    for j, box in enumerate(exhaustion.boxes):
        val, rep = riemann_integral(f, box.product(S), exhaustion.level(j), tol)
        values.append(val)
        reports.append(rep)
    distances = tuple(ky_fan(b - a) for a, b in zip(values[:-1], values[1:]))
    ok = all(x <= tol for x in distances[-2:]) and reports[-1].accepted
    if not ok:
        raise InconclusiveError("product integral over the exhaustion did not settle", reports[-1])
    return values[-1], reports[-1]


def iterated_product_residual(f, B, S, level=7, tol=0.02):
    """Product integral of ``f`` on ``B x S`` against both iterated integrals.

    ``B`` may be a ``Box`` or an ``Exhaustion`` (unbounded first factor).
    Returns ``(product vs int_B dx int_S ds, product vs int_S ds int_B dx)``.
    Slice integrability is probed at the centre of each factor; a rejected
    slice makes the comparison inconclusive.
    """
    if f.dim != (B.dim + S.dim):
        raise DomainError("field dimension must be dim(B) + dim(S)")
    ctol = _conv_tol(tol, f.path_count)
    if isinstance(B, Exhaustion):
        outer_box = B.box(B.n_boxes - 1)
        slice_level = B.level(B.n_boxes - 1)
        prod, prod_rep = _improper_product(f, B, S, ctol)
    else:
        outer_box = B
        slice_level = level
        prod, prod_rep = riemann_integral(f, B.product(S), level, ctol)
        _require(prod_rep, "product integral")

    over_s = SliceIntegralField(f, S, over="inner", level=level)
    over_b = SliceIntegralField(f, outer_box, over="outer", level=slice_level)
    _probe_slices(f, outer_box, S, level, ctol)

    if isinstance(B, Exhaustion):
        it_bs, rep_bs = improper_integral(over_s, B, ctol)
    else:
        it_bs, rep_bs = riemann_integral(over_s, B, level, ctol)
    _require(rep_bs, "iterated integral dx ds")
    it_sb, rep_sb = riemann_integral(over_b, S, level, ctol)
    _require(rep_sb, "iterated integral ds dx")
    first = _finish("product_vs_dx_ds", prod, it_bs, [(level, ky_fan(prod - it_bs))], (prod_rep, rep_bs), tol)
    second = _finish("product_vs_ds_dx", prod, it_sb, [(level, ky_fan(prod - it_sb))], (prod_rep, rep_sb), tol)
    return first, second


def _probe_slices(f, B, S, level, tol):
    from .riemann import RandomField

    xc = np.array([(a + b) / 2 for a, b in zip(B.lows, B.highs)])
    sc = np.array([(a + b) / 2 for a, b in zip(S.lows, S.highs)])
    at_x = RandomField(
        lambda pts: f.sample(np.hstack([np.tile(xc, (pts.shape[0], 1)), pts])), f.space_id, f.path_count, S.dim
    )
    at_s = RandomField(
        lambda pts: f.sample(np.hstack([pts, np.tile(sc, (pts.shape[0], 1))])), f.space_id, f.path_count, B.dim
    )
    _, r1 = riemann_integral(at_x, S, level, tol)
    _require(r1, "slice over S")
    _, r2 = riemann_integral(at_s, B, level, tol)
    _require(r2, "slice over B")


# ---------------------------------------------------------------- one-dimensional identities


def _check_interval_field(f, s):
    if f.dim != 1:
        raise DomainError("the field must be one-dimensional")
    if not s > 0:
        raise DomainError("s must be positive")


def triangle_identity_residual(f, s=1.0, level=8, tol=0.02, n_trace=3):
    """``int_0^s du int_0^u xi(v) dv`` against ``int_0^s (s - v) xi(v) dv``."""
    _check_interval_field(f, s)
    ctol = _conv_tol(tol, f.path_count)
    box = Box.interval(0.0, s)
    _, rep = riemann_integral(f, box, level, ctol)
    _require(rep, "integral of the field on [0, s]")
    trace = []
    lhs = rhs = None
    for L in _levels(level, n_trace):
        eta = IndefiniteIntegralField(f, 0.0, s, level=L + INNER_EXTRA_LEVELS)
        lhs, rl = riemann_integral(eta, box, L, ctol)
        _require(rl, "nested integral", L == level)
        rhs, rr = riemann_integral(f.weighted(lambda v: s - v[:, 0]), box, L, ctol)
        _require(rr, "weighted integral", L == level)
        trace.append((L, ky_fan(lhs - rhs)))
    return _finish("triangle", lhs, rhs, trace, (rep,), tol)


def parts_identity_residual(f, g, dg, s=1.0, level=8, tol=0.02, n_trace=3):
    """``g(s) int_0^s xi`` against ``int_0^s g xi + int_0^s g'(u) du int_0^u xi``.

    ``g`` and its derivative ``dg`` are vectorised deterministic functions of
    one variable; ``g`` must be continuously differentiable.
    """
    if dg is None:
        raise PreconditionError("the derivative of g must be supplied")
    _check_interval_field(f, s)
    ctol = _conv_tol(tol, f.path_count)
    box = Box.interval(0.0, s)
    trace = []
    reports = []
    lhs = rhs = None
    for L in _levels(level, n_trace):
        whole, r0 = riemann_integral(f, box, L, ctol)
        _require(r0, "integral of the field on [0, s]", L == level)
        lhs = whole * float(g(np.array([s]))[0])
        weighted, r1 = riemann_integral(f.weighted(lambda pts: g(pts[:, 0])), box, L, ctol)
        _require(r1, "integral of g times the field", L == level)
        eta = IndefiniteIntegralField(f, 0.0, s, level=L + INNER_EXTRA_LEVELS)
        nested, r2 = riemann_integral(eta.weighted(lambda pts: dg(pts[:, 0])), box, L, ctol)
        _require(r2, "nested integral", L == level)
        rhs = weighted + nested
        trace.append((L, ky_fan(lhs - rhs)))
        reports = [r0, r1, r2]
    return _finish("parts", lhs, rhs, trace, reports, tol)
