"""Mild solutions of ``dX = A X dt + sum_i f_i dmu_i`` and checks of their weak form.

The mild solution is

    X(x, t) = S(t) xi0(x) + sum_i int_{[0, t]} [S(t - s) f_i(., s)](x) dmu_i(s)

with the stochastic integrals taken as left-point sums on the dyadic time grid
of the chosen level.  Every integrand is deterministic, so one set of kernel
matrices (one per time lag) serves all paths.  Times must be grid points.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .drivers import integrate_det_many
from .errors import AlignmentError, CoverageError, DomainError, GridError, InconclusiveError, PreconditionError
from .parabolic import (
    AnalyticFunction,
    GridFunction,
    Quadrature,
    UniformGrid,
    _lattice_points,
    _pts,
    crank_nicolson,
)
from .prob import Ensemble, ky_fan
from .riemann import Box, DeterministicField, Exhaustion, RandomField, classical_integral, improper_integral


@dataclass(frozen=True)
class Forcing:
    """Deterministic coefficient ``f(x, s)`` of a driving measure.

    ``fn(points, s)`` takes ``(N, d)`` points and a scalar time and returns
    ``(N,)`` values.  Mark ``time_dependent=False`` when ``f`` ignores ``s``;
    that enables a much cheaper convolution.
    """

    fn: object
    time_dependent: bool = False
    name: str = "f"

    def __call__(self, pts, s):
        return np.asarray(self.fn(pts, s), dtype=np.float64).reshape(-1)

    @classmethod
    def constant(cls, value, name=None):
        v = float(value)
        return cls(lambda pts, s: np.full(len(pts), v), False, name or f"const{v:g}")

    @classmethod
    def spatial(cls, fn, name="f"):
        return cls(lambda pts, s: fn(pts), False, name)


@dataclass(frozen=True)
class ProblemData:
    """Initial value and ``(driver, forcing)`` pairs.

    ``initial`` may be ``None`` (zero), a deterministic callable or
    ``AnalyticFunction``, or a ``RandomField``.  A forcing of ``None`` is zero.
    """

    initial: object = None
    terms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple((d, f) for d, f in self.terms))

    @property
    def drivers(self):
        return [d for d, _ in self.terms]


def _initial_kind(initial):
    if initial is None:
        return "zero"
    if isinstance(initial, RandomField):
        return "deterministic" if getattr(initial, "deterministic", False) else "random"
    return "deterministic"


def _initial_values(initial, pts):
    if isinstance(initial, DeterministicField):
        return initial.values(pts)
    if isinstance(initial, GridFunction):
        return initial.interpolator()(pts)
    if isinstance(initial, AnalyticFunction):
        return initial.value(pts)
    return np.asarray(initial(pts), dtype=np.float64).reshape(-1)


class GridInterpolatedField(RandomField):
    """Random field given by per-path values at grid nodes, linear in between."""

    def __init__(self, grid, values, space_id, name="grid field"):
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.shape[1] != grid.size:
            raise GridError("one column per grid node")
        self.grid = grid
        self._values = values
        super().__init__(self._eval, space_id, values.shape[0], grid.dim, name)

    def _eval(self, pts):
        g = self.grid
        lows = np.asarray(g.lows)
        pos = (pts - lows) / g.h
        n = np.asarray(g.shape) - 1
        if np.any(pos < -1e-9) or np.any(pos > n + 1e-9):
            raise DomainError("point outside the solution grid")
        pos = np.clip(pos, 0, n)
        idx = np.minimum(np.floor(pos).astype(np.int64), n - 1)
        frac = pos - idx
        if g.dim == 1:
            return K.gather_lerp(self._values, idx[:, 0], frac[:, 0])
        vals = self._values.reshape(self.path_count, *g.shape)
        i, j = idx[:, 0], idx[:, 1]
        fx, fy = frac[:, 0], frac[:, 1]
        return (
            vals[:, i, j] * (1 - fx) * (1 - fy)
            + vals[:, i + 1, j] * fx * (1 - fy)
            + vals[:, i, j + 1] * (1 - fx) * fy
            + vals[:, i + 1, j + 1] * fx * fy
        )


class FieldSolution:
    """``X(x, t)`` at grid nodes and chosen times, per path, plus ``int_0^t X(x, s) ds``.

    ``values`` and ``time_integrals`` have shape ``(n_times, M, n_nodes)``.
    The time integrals are right-endpoint sums on the dyadic grid of
    ``level``.
    """

    def __init__(self, grid, times, values, time_integrals, space_id, level, op=None, provenance=None):
        self.grid = grid
        self.times = np.asarray(times, dtype=np.float64)
        values = np.asarray(values, dtype=np.float64)
        time_integrals = np.asarray(time_integrals, dtype=np.float64)
        values.setflags(write=False)
        time_integrals.setflags(write=False)
        self.values = values
        self.time_integrals = time_integrals
        self.space_id = space_id
        self.level = level
        self.op = op
        self.provenance = dict(provenance or {})

    def __repr__(self):
        return f"FieldSolution(grid={self.grid!r}, times={self.times.tolist()}, M={self.path_count}, level={self.level})"

    @property
    def path_count(self):
        return self.values.shape[1]

    def time_index(self, t):
        hits = np.flatnonzero(np.abs(self.times - t) <= 1e-12 * max(1.0, abs(t)))
        if hits.size == 0:
            raise DomainError(f"t = {t} is not one of the solution times {self.times.tolist()}")
        return int(hits[0])

    def at(self, t):
        """``(M, n_nodes)`` samples of ``X(., t)``."""
        return self.values[self.time_index(t)]

    def ensemble(self, t, x):
        node = int(self.grid.index_of(x)[0])
        return Ensemble(self.at(t)[:, node], self.space_id)

    def field(self, t):
        return GridInterpolatedField(self.grid, self.at(t), self.space_id, f"X(., {t})")

    def time_integral_field(self, t):
        return GridInterpolatedField(
            self.grid, self.time_integrals[self.time_index(t)], self.space_id, f"int_0^{t} X ds"
        )

    def shifted(self, c):
        """The solution plus the constant ``c`` (time integrals gain ``c t``)."""
        return FieldSolution(
            self.grid,
            self.times,
            self.values + c,
            self.time_integrals + c * self.times[:, None, None],
            self.space_id,
            self.level,
            self.op,
            dict(self.provenance, shifted=c),
        )

    # -- export -------------------------------------------------------------

    def to_csv(self, path, reference=None):
        """Per node and time: mean, variance, and the Ky Fan distance to ``reference``.

        Columns ``x_index,t,mean,variance,ky_fan_vs_reference``.  Without a
        reference the last column is ``ky_fan(X)``.
        """
        lines = ["x_index,t,mean,variance,ky_fan_vs_reference"]
        for j, t in enumerate(self.times):
            vals = self.values[j]
            ref = 0.0 if reference is None else reference.at(t)
            dist = K.kyfan_rows(np.ascontiguousarray((vals - ref).T))
            mean = vals.mean(axis=0)
            var = vals.var(axis=0, ddof=1)
            for i in range(vals.shape[1]):
                lines.append(f"{i},{t:.17g},{mean[i]:.17g},{var[i]:.17g},{dist[i]:.17g}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    _MAGIC = b"SMFSOL01"

    def to_binary(self, path):
        """Raw dump, little endian.

        Layout: 8-byte magic ``SMFSOL01``; int64 ``dim``; per axis float64
        ``low``, float64 ``high``, int64 ``node_count``; float64 ``h``; int64
        ``n_times``; int64 ``n_paths``; float64 ``times[n_times]``; then
        ``values`` and ``time_integrals``, each row-major float64 of shape
        ``(n_times, n_paths, n_nodes)``.
        """
        g = self.grid
        with open(path, "wb") as fh:
            fh.write(self._MAGIC)
            fh.write(struct.pack("<q", g.dim))
            for lo, hi, n in zip(g.lows, g.highs, g.shape):
                fh.write(struct.pack("<ddq", lo, hi, n))
            fh.write(struct.pack("<d", g.h))
            fh.write(struct.pack("<qq", self.times.size, self.path_count))
            fh.write(self.times.astype("<f8").tobytes())
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.time_integrals, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path, space_id=None):
        with open(path, "rb") as fh:
            buf = fh.read()
        if buf[:8] != cls._MAGIC:
            raise DomainError("not a solution dump")
        off = 8
        (dim,) = struct.unpack_from("<q", buf, off)
        off += 8
        lows, highs = [], []
        for _ in range(dim):
            lo, hi, _n = struct.unpack_from("<ddq", buf, off)
            off += 24
            lows.append(lo)
            highs.append(hi)
        (h,) = struct.unpack_from("<d", buf, off)
        off += 8
        n_times, n_paths = struct.unpack_from("<qq", buf, off)
        off += 16
        grid = UniformGrid(lows, highs, h)
        times = np.frombuffer(buf, "<f8", n_times, off)
        off += 8 * n_times
        count = n_times * n_paths * grid.size
        values = np.frombuffer(buf, "<f8", count, off).reshape(n_times, n_paths, grid.size)
        off += 8 * count
        ints = np.frombuffer(buf, "<f8", count, off).reshape(n_times, n_paths, grid.size)
        sid = space_id if space_id is not None else f"dump:{n_paths}"
        return cls(grid, times.copy(), values.copy(), ints.copy(), sid, None)


# ---------------------------------------------------------------- mild solution


def _common_driver_facts(data):
    drivers = data.drivers
    if not drivers:
        return None, None, None
    sid = drivers[0].space_id
    if any(d.space_id != sid for d in drivers):
        raise AlignmentError("all drivers must live on one probability space")
    T = drivers[0].T
    if any(d.T != T for d in drivers):
        raise GridError("all drivers must share the horizon T")
    return sid, drivers[0].path_count, T


def _time_steps(times, T, level):
    dt = T / (1 << level)
    times = np.asarray(times, dtype=np.float64)
    steps = np.rint(times / dt).astype(np.int64)
    if np.any(np.abs(steps * dt - times) > 1e-9 * max(T, 1.0)):
        raise GridError(f"times must lie on the dyadic grid of step {dt}")
    if np.any(times < 0) or np.any(times > T * (1 + 1e-12)):
        raise DomainError("times outside [0, T]")
    return steps, dt


def mild_solution(op, data, grid, times, level=8, ps=None, quad=Quadrature(), horizon=None):
    """Mild solution on ``grid`` at ``times`` with left-point stochastic convolutions.

    Parameters
    ----------
    op : EllipticOperator
    data : ProblemData
    grid : UniformGrid
    times : sequence of float
        Output times; each must be a multiple of ``T / 2**level``.
    level : int
        Time discretisation (at most the driver's grid level).
    ps : ProbSpace, optional
        Needed only when there are no drivers (it fixes ``M`` and the space).
    horizon : float, optional
        ``T`` when there are no drivers.

    Returns
    -------
    FieldSolution
    """
    if grid.dim != op.dim:
        raise DomainError("grid and operator dimensions differ")
    sid, M, T = _common_driver_facts(data)
    if sid is None:
        if ps is None:
            raise PreconditionError("without drivers a ProbSpace is required")
        sid, M = ps.space_id, ps.path_count
        T = float(horizon) if horizon is not None else float(max(times))
    if isinstance(data.initial, RandomField) and data.initial.space_id != sid:
        raise AlignmentError("initial field and drivers live on different spaces")
    for d in data.drivers:
        if level > d.log2_n:
            raise GridError(f"level {level} is finer than a driver grid")
    steps, dt = _time_steps(times, T, level)
    m_max = int(steps.max(initial=0))
    pts = grid.points()
    n_nodes = pts.shape[0]

    # one quadrature lattice for every lag: finest spacing, widest reach
    t_max = m_max * dt
    kind = _initial_kind(data.initial)
    if isinstance(data.initial, GridFunction):
        lo = pts.min(axis=0) + np.minimum(0, op.b * t_max) - op.core_radius(t_max)
        hi = pts.max(axis=0) + np.maximum(0, op.b * t_max) + op.core_radius(t_max)
        if not data.initial.grid.covers(lo, hi):
            raise CoverageError(f"initial grid does not cover the kernel reach {op.radius(t_max):.3g}")
    ys, q = _run_lattice(op, pts, t_max, dt, quad)
    cell = q**op.dim

    n_t = len(steps)
    values = np.zeros((n_t, M, n_nodes))
    integrals = np.zeros((n_t, M, n_nodes))

    # kernel matrices by lag, streamed
    want = {int(s) for s in steps if s > 0}
    init_vals = None
    if kind == "deterministic":
        init_vals = _initial_values(data.initial, ys)
        node_init = _initial_values(data.initial, pts)
    elif kind == "random":
        init_vals = data.initial.sample(ys)  # (M, Q)
        node_init = data.initial.sample(pts)
    forcings = [(d, f) for d, f in data.terms if f is not None]
    static = [(d, f, f(ys, 0.0)) for d, f in forcings if not f.time_dependent]
    dynamic = [(d, f) for d, f in forcings if f.time_dependent]
    s_grid = np.arange(m_max) * dt
    dyn_F = [np.stack([f(ys, s) for s in s_grid], axis=1) if m_max else None for _, f in dynamic]

    # H[l] = S(l dt) f for static forcings; D[j] = S(t_j) weights for the initial value
    H = [np.zeros((m_max + 1, n_nodes)) for _ in static]
    init_at = {}
    init_cum = np.zeros((n_nodes, ys.shape[0])) if kind != "zero" else None
    cum_by_step = {}
    # dynamic forcings: value and cumulative weights per requested time
    dyn_val = [{int(s): np.zeros((int(s), n_nodes)) for s in want} for _ in dynamic]
    dyn_cum = [{int(s): np.zeros((int(s), n_nodes)) for s in want} for _ in dynamic]
    for lag in range(1, m_max + 1):
        P = op.kernel_matrix(pts, ys, lag * dt) * cell
        for h_arr, (_, _, fy) in zip(H, static):
            h_arr[lag] = P @ fy
        for k_term, F in enumerate(dyn_F):
            B = P @ F  # column k holds S(lag dt) f(., s_k)
            for s in want:
                k_hi = s - lag  # increments k with k + lag <= s
                if k_hi < 0:
                    continue
                dyn_val[k_term][s][k_hi] = B[:, k_hi]
                dyn_cum[k_term][s][: k_hi + 1] += dt * B[:, : k_hi + 1].T
        if init_cum is not None:
            init_cum += dt * P
            if lag in want:
                init_at[lag] = P
                cum_by_step[lag] = init_cum.copy()

    cum_H = [np.cumsum(h_arr, axis=0) * dt for h_arr in H]
    for j, s in enumerate(steps):
        s = int(s)
        if kind == "deterministic":
            if s == 0:
                values[j] += node_init[None, :]
            else:
                values[j] += (init_at[s] @ init_vals)[None, :]
                integrals[j] += (cum_by_step[s] @ init_vals)[None, :]
        elif kind == "random":
            if s == 0:
                values[j] += node_init
            else:
                values[j] += init_vals @ init_at[s].T
                integrals[j] += init_vals @ cum_by_step[s].T
        if s == 0:
            continue
        for h_arr, c_arr, (d, _, _) in zip(H, cum_H, static):
            inc = d.aggregated(level)[:, :s]
            # X(t_s) = sum_{k<s} dmu_k H[s-k];  int_0^{t_s} X = sum_k dmu_k dt sum_{l<=s-k} H[l]
            values[j] += K.row_dot(inc, h_arr[s:0:-1])
            integrals[j] += K.row_dot(inc, c_arr[s:0:-1])
        for k_term, (d, _) in enumerate(dynamic):
            inc = d.aggregated(level)[:, :s]
            values[j] += K.row_dot(inc, dyn_val[k_term][s])
            integrals[j] += K.row_dot(inc, dyn_cum[k_term][s])

    prov = {
        "initial": kind,
        "drivers": [d.kind for d in data.drivers],
        "forcings": [getattr(f, "name", "zero") if f is not None else "zero" for _, f in data.terms],
        "lattice_spacing": q,
        "lattice_size": int(ys.shape[0]),
    }
    return FieldSolution(grid, np.asarray(times, dtype=np.float64), values, integrals, sid, level, op, prov)


def multi_measure_solution(op, data, grid, times, level=8, **kwargs):
    """``S(t) xi0 + sum_i int S(t - s) f_i dmu_i``; every driver must share one space."""
    _common_driver_facts(data)
    return mild_solution(op, data, grid, times, level, **kwargs)


def _run_lattice(op, pts, t_max, dt, quad):
    if t_max <= 0:
        return pts.copy(), 1.0
    q = quad.spacing(op, dt)
    r0 = op.core_radius(t_max)
    axes = []
    for i in range(op.dim):
        lo = pts[:, i].min() + min(0.0, op.b[i] * t_max) - r0
        hi = pts[:, i].max() + max(0.0, op.b[i] * t_max) + r0
        n = int(math.ceil((hi - lo) / q))
        axes.append(lo + q * np.arange(n + 1))
    return _lattice_points(axes), q


# ---------------------------------------------------------------- weak form


@dataclass(frozen=True)
class WeakResidual:
    """``ky_fan`` of ``int X phi - int xi0 phi - int A*phi int_0^t X ds - int dmu int f phi``."""

    value: float
    terms: dict = field(repr=False)
    window: float = 0.0
    reports: tuple = field(default=(), repr=False)


def _window_exhaustion(phi, grid, eps=1e-10, n_boxes=4):
    """Nested windows around the test function's centre, growing by sqrt(2), the
    last one reaching the radius where ``|phi| < eps max|phi|``."""
    r = phi.decay_radius(eps)
    center = tuple(phi.center)
    lo = np.asarray(center) - r
    hi = np.asarray(center) + r
    if not grid.covers(lo, hi):
        raise CoverageError(f"grid {grid} does not reach the test-function window of radius {r:.3g}")
    growth = math.sqrt(2.0)
    base_half = r / growth ** (n_boxes - 1)
    # cells no wider than half the grid spacing
    base_level = max(3, int(math.ceil(math.log2(2 * base_half / (grid.h / 2)))))
    return Exhaustion(grid.dim, base_half, n_boxes, base_level, center=center, growth=growth), r


def _test_weighted(field_, fn):
    return field_.weighted(lambda pts: fn(pts))


def weak_residual(sol, phi, t, data, tol=0.05, eps=1e-10):
    """Check the weak form at time ``t`` against the test function ``phi``.

    Spatial integrals are improper Riemann integrals over nested windows that
    end where the Gaussian envelope of ``phi`` drops below ``eps`` times its
    maximum; the time integral of ``X`` is the right-endpoint sum stored in
    ``sol``; the noise term integrates ``s -> int f(x, s) phi(x) dx`` against
    each driver with left-point sums at ``sol.level``.
    """
    op = sol.op
    if op is None:
        raise PreconditionError("solution carries no operator")
    exh, r = _window_exhaustion(phi, sol.grid, eps)
    j = sol.time_index(t)
    phi_fn = phi.value
    adj_fn = lambda pts: op.adjoint_apply(phi, pts)  # noqa: E731

    t1, r1 = improper_integral(_test_weighted(sol.field(t), phi_fn), exh, tol)
    if data.initial is None:
        t2 = Ensemble(np.zeros(sol.path_count), sol.space_id)
        r2 = None
    else:
        init = data.initial
        if not isinstance(init, RandomField):
            init = DeterministicField(
                lambda pts, g=init: _initial_values(g, pts), sol.space_id, sol.path_count, sol.grid.dim
            )
        t2, r2 = improper_integral(_test_weighted(init, phi_fn), exh, tol)
    if sol.times[j] == 0:
        t3 = Ensemble(np.zeros(sol.path_count), sol.space_id)
        r3 = None
    else:
        t3, r3 = improper_integral(_test_weighted(sol.time_integral_field(t), adj_fn), exh, tol)
    t4 = np.zeros(sol.path_count)
    box = exh.box(exh.n_boxes - 1)
    for d, f in data.terms:
        if f is None:
            continue
        if d.space_id != sol.space_id:
            raise AlignmentError("driver and solution live on different spaces")
        s_left = d.grid(sol.level)[:-1]
        inside = s_left < t - 1e-12
        g = np.zeros(s_left.size)
        panels = max(8, int(math.ceil(2 * r / 0.25)))
        if f.time_dependent:
            g[inside] = [
                classical_integral(lambda pts, s=s: f(pts, s) * phi_fn(pts), box, panels=panels) for s in s_left[inside]
            ]
        else:
            g[inside] = classical_integral(lambda pts: f(pts, 0.0) * phi_fn(pts), box, panels=panels)
        t4 = t4 + integrate_det_many(d, g[:, None], sol.level)[:, 0]
    t4 = Ensemble(t4, sol.space_id)
    reports = tuple(rep for rep in (r1, r2, r3) if rep is not None)
    for rep in reports:
        if not rep.accepted:
            raise InconclusiveError("a spatial integral in the weak form did not settle", rep)
    value = ky_fan(t1 - t2 - t3 - t4)
    return WeakResidual(value, {"X_phi": t1, "xi_phi": t2, "adjoint": t3, "noise": t4}, r, reports)


# ---------------------------------------------------------------- probes


@dataclass(frozen=True)
class CrosscheckReport:
    rel_linf: float
    per_time: tuple
    mild: np.ndarray = field(repr=False)
    oracle: np.ndarray = field(repr=False)


def deterministic_crosscheck(op, data, grid, times, level=10, dt=1e-3, ps=None, horizon=None):
    """Mild solution with a deterministic driver against Crank-Nicolson for
    ``u_t = A u + f rho``, ``u(., 0) = xi0``.

    Reports ``max |X - u| / max |u|`` over grid nodes and times (and per time).
    """
    for d, _ in data.terms:
        if d.kind != "deterministic":
            raise PreconditionError("the crosscheck needs deterministic drivers")
    if isinstance(data.initial, RandomField) and not getattr(data.initial, "deterministic", False):
        raise PreconditionError("the crosscheck needs a deterministic initial value")
    sol = mild_solution(op, data, grid, times, level, ps=ps, horizon=horizon)
    mild = sol.values[:, 0, :]

    def initial(x):
        if data.initial is None:
            return np.zeros_like(x)
        return _initial_values(data.initial, x[:, None])

    forcing = None
    active = [(d, f) for d, f in data.terms if f is not None]
    if active:

        def forcing(x, s):
            out = np.zeros_like(x)
            for d, f in active:
                rho = d.params.get("rho", 1.0)
                r = float(rho(np.array([s]))[0]) if callable(rho) else float(rho)
                out += f(x[:, None], s) * r
            return out

    oracle = crank_nicolson(op, initial, grid, times, dt=dt, forcing=forcing)
    scale = max(float(np.max(np.abs(oracle))), 1e-300)
    per_time = tuple(float(np.max(np.abs(mild[j] - oracle[j])) / scale) for j in range(len(times)))
    return CrosscheckReport(max(per_time), per_time, mild, oracle)


def uniqueness_probe(sol_a, sol_b, phi, t, eps=1e-10, tol=0.05):
    """``ky_fan(int (X_a - X_b)(x, t) phi(x) dx)`` for two solutions of one problem."""
    op = sol_a.op
    if op is None or not op.self_adjoint:
        raise PreconditionError("the probe is only claimed for self-adjoint operators (b = 0)")
    if sol_a.space_id != sol_b.space_id:
        raise AlignmentError("solutions live on different spaces")
    if sol_a.grid != sol_b.grid:
        raise GridError("solutions live on different grids")
    exh, _ = _window_exhaustion(phi, sol_a.grid, eps)
    diff = GridInterpolatedField(sol_a.grid, sol_a.at(t) - sol_b.at(t), sol_a.space_id)
    val, rep = improper_integral(_test_weighted(diff, phi.value), exh, tol)
    if not rep.accepted:
        raise InconclusiveError("projection integral did not settle", rep)
    return ky_fan(val)
