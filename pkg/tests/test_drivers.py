import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochriemann.drivers import IntervalUnion, integrate_det, integrate_det_many, make_driver, measure
from stochriemann.errors import DomainError, GridError, ParameterError, PreconditionError
from stochriemann.prob import ProbSpace, ky_fan_distance


def three_se(var, m):
    return 3 * var * np.sqrt(2 / (m - 1))


def test_deterministic_unit_density():
    d = make_driver(ProbSpace(20), "deterministic", 1.0, 8)
    assert np.array_equal(d.increments, np.full((20, 8), 1 / 8))


def test_deterministic_density_callable():
    d = make_driver(ProbSpace(4), "deterministic", 1.0, 64, rho=lambda s: 2 * s)
    assert measure(d, [(0.0, 1.0)]).samples == pytest.approx(np.ones(4), abs=1e-12)


def test_wiener_increment_variance():
    ps = ProbSpace(4000, 1)
    d = make_driver(ps, "wiener", 1.0, 256)
    for a, b in [(0.0, 1.0), (0.25, 0.5), (0.5, 0.625)]:
        v = measure(d, [(a, b)]).var()
        assert abs(v - (b - a)) <= three_se(b - a, ps.path_count)


def test_fbm_variance_law():
    ps = ProbSpace(4000, 2)
    d = make_driver(ps, "fbm", 1.0, 256, H=0.7)
    for t in (0.25, 0.5, 1.0):
        target = t**1.4
        v = measure(d, [(0.0, t)]).var()
        assert abs(v - target) <= three_se(target, ps.path_count)


def test_compensated_poisson_moments():
    ps = ProbSpace(4000, 3)
    d = make_driver(ps, "compensated_poisson", 1.0, 128, lam=3.0)
    x = measure(d, [(0.0, 0.5)])
    assert abs(x.mean()) <= 3 * np.sqrt(1.5 / ps.path_count)
    assert abs(x.var() - 1.5) <= 3 * 1.5 * np.sqrt(2 / ps.path_count) + 0.1


@pytest.mark.parametrize("H", [0.5, 0.4, 1.0, None])
def test_fbm_hurst_guard(H):
    with pytest.raises(ParameterError, match=r"H out of \(1/2,1\)"):
        make_driver(ProbSpace(10), "fbm", H=H)


def test_grid_guards():
    ps = ProbSpace(10)
    with pytest.raises(GridError):
        make_driver(ps, "wiener", 1.0, 100)
    with pytest.raises(GridError):
        make_driver(ps, "wiener", 1.0, 1 << 15)
    with pytest.raises(ParameterError):
        make_driver(ps, "levy")
    with pytest.raises(ParameterError):
        make_driver(ps, "compensated_poisson", lam=0.0)


def test_measure_oracles():
    ps = ProbSpace(50, 4)
    d = make_driver(ps, "wiener", 1.0, 64)
    assert np.array_equal(measure(d, []).samples, np.zeros(50))
    whole = measure(d, [(0.0, 1.0)]).samples
    halves = measure(d, [(0.0, 0.5)]).samples + measure(d, [(0.5, 1.0)]).samples
    assert np.allclose(whole, halves, rtol=0, atol=1e-14)
    det = make_driver(ps, "deterministic", 1.0, 64)
    assert measure(det, [(0.25, 0.5)]).samples == pytest.approx(np.full(50, 0.25), abs=1e-15)
    det10 = make_driver(ps, "deterministic", 1.0, 1024)
    assert measure(det10, [(0.2, 0.5)]).samples == pytest.approx(np.full(50, 0.3), abs=1e-3)


def test_measure_domain_and_snapping():
    d = make_driver(ProbSpace(10), "wiener", 1.0, 8)
    with pytest.raises(DomainError):
        measure(d, [(-0.5, 0.5)])
    with pytest.raises(DomainError):
        measure(d, [(0.5, 1.5)])
    u = IntervalUnion.snap([(0.0, 0.25), (0.2, 0.5), (0.75, 0.75)], 1.0, 8)
    assert u.ranges == ((0, 4),)
    assert u.length() == 0.5


@given(st.lists(st.tuples(st.integers(0, 16), st.integers(0, 16)), min_size=1, max_size=5))
@settings(max_examples=40, deadline=None)
def test_finite_additivity(pairs):
    d = make_driver(ProbSpace(20, 5), "wiener", 1.0, 16)
    cells = sorted({k for a, b in pairs for k in range(min(a, b), max(a, b))})
    direct = measure(d, [(k / 16, (k + 1) / 16) for k in cells]).samples
    assert np.allclose(direct, d.increments[:, cells].sum(axis=1), rtol=0, atol=1e-13)


def test_integrate_indicator_equals_measure():
    d = make_driver(ProbSpace(30, 6), "wiener", 1.0, 64)
    got = integrate_det(d, lambda s: ((s >= 0.25) & (s < 0.5)).astype(float))
    assert np.allclose(got.samples, measure(d, [(0.25, 0.5)]).samples, rtol=0, atol=1e-14)


def test_integrate_isometry():
    ps = ProbSpace(4000, 7)
    d = make_driver(ps, "wiener", 1.0, 256)
    v = integrate_det(d, lambda s: s).var()
    assert abs(v - 1 / 3) <= three_se(1 / 3, ps.path_count)


def test_integrate_deterministic_driver():
    d = make_driver(ProbSpace(5), "deterministic", 1.0, 256)
    for level in (4, 6, 8):
        v = integrate_det(d, lambda s: s, level).samples
        assert np.all(np.abs(v - 0.5) <= 2.0**-level)
        assert np.ptp(v) == 0.0


def test_integrate_linearity_and_refinement():
    d = make_driver(ProbSpace(1000, 8), "wiener", 1.0, 1024)
    g1, g2 = np.cos, np.exp
    lhs = integrate_det(d, lambda s: 2 * g1(s) - 3 * g2(s), 7).samples
    rhs = 2 * integrate_det(d, g1, 7).samples - 3 * integrate_det(d, g2, 7).samples
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12)
    dist = [ky_fan_distance(integrate_det(d, g2, L), integrate_det(d, g2, L + 1)) for L in (3, 5, 7, 9)]
    assert all(b < a for a, b in zip(dist[:-1], dist[1:]))


def test_integrate_unbounded_rejected():
    d = make_driver(ProbSpace(5), "wiener", 1.0, 8)
    with np.errstate(divide="ignore"):
        with pytest.raises(PreconditionError):
            integrate_det(d, lambda s: 1 / s)


def test_integrate_many_matches_single():
    d = make_driver(ProbSpace(40, 9), "fbm", 1.0, 64, H=0.8)
    s = d.grid(5)[:-1]
    w = np.stack([np.sin(s), s**2], axis=1)
    out = integrate_det_many(d, w, 5)
    assert np.allclose(out[:, 0], integrate_det(d, np.sin, 5).samples, atol=1e-13)
    with pytest.raises(GridError):
        integrate_det_many(d, w[:-1], 5)


def test_independent_streams():
    ps = ProbSpace(100, 10)
    a = make_driver(ps, "wiener", stream="a")
    b = make_driver(ps, "wiener", stream="b")
    assert not np.array_equal(a.increments, b.increments)
    assert np.array_equal(a.increments, make_driver(ps, "wiener", stream="a").increments)
    assert np.array_equal((-a).increments, -a.increments)


def test_paths_and_coarsening():
    d = make_driver(ProbSpace(10, 11), "wiener", 1.0, 16)
    path = d.path()
    assert path.shape == (10, 17)
    assert np.allclose(path[:, -1], d.increments.sum(axis=1))
    agg = d.aggregated(2)
    assert agg.shape == (10, 4)
    assert np.allclose(agg.sum(axis=1), path[:, -1])
