import math

import numpy as np
import pytest

from stochriemann import catalog
from stochriemann.drivers import integrate_det, make_driver
from stochriemann.errors import DomainError, GridError, InconclusiveError, PreconditionError
from stochriemann.interchange import (
    default_threshold,
    fubini_improper_residual,
    fubini_residual,
    iterated_product_residual,
    parts_identity_residual,
    triangle_identity_residual,
)
from stochriemann.prob import ProbSpace
from stochriemann.riemann import Box, DeterministicField, DriverPathField, Exhaustion, FactorField, RandomField


@pytest.fixture(scope="module")
def ps():
    return ProbSpace(1000, 21)


@pytest.fixture(scope="module")
def wiener(ps):
    return make_driver(ps, "wiener", 1.0, 256)


def test_threshold():
    assert default_threshold(0.02, 1000) == pytest.approx(2 / math.sqrt(1000))
    assert default_threshold(0.05, 10_000) == 0.05


def test_fubini_separable(wiener):
    h = lambda pts, s: np.exp(-pts[:, :1] ** 2) * np.cos(s)[None, :]
    res = fubini_residual(wiener, h, Box.interval(0, 1), level=8)
    expected = integrate_det(wiener, np.cos).samples * math.sqrt(math.pi) / 2 * math.erf(1)
    assert res.holds and res.residual <= 0.02
    assert np.allclose(res.rhs.samples, expected, atol=1e-10)


def test_fubini_deterministic_driver_is_classical(ps):
    d = make_driver(ps, "deterministic", 1.0, 256)
    h = catalog.FUBINI_INTEGRANDS["gauss_x_lin_s"]
    res = fubini_residual(d, h, Box.interval(0, 1), level=8)
    exact = 1.5 * math.sqrt(math.pi) / 2 * math.erf(1)
    mesh = 2.0**-8
    assert abs(res.lhs.samples[0] - exact) <= 10 * mesh
    assert abs(res.rhs.samples[0] - exact) <= 10 * mesh
    assert np.ptp(res.lhs.samples) == 0


def test_fubini_trace_and_sign_flip(wiener):
    h = catalog.FUBINI_INTEGRANDS["gauss_x_lin_s"]
    res = fubini_residual(wiener, h, Box.interval(0, 1), level=8)
    flipped = fubini_residual(-wiener, h, Box.interval(0, 1), level=8)
    assert [l for l, _ in res.trace] == [6, 7, 8]
    assert res.non_increasing(2 / math.sqrt(1000))
    assert flipped.residual == pytest.approx(res.residual, rel=1e-9, abs=1e-15)


def test_fubini_level_guard(ps):
    d = make_driver(ps, "wiener", 1.0, 64)
    with pytest.raises(GridError):
        fubini_residual(d, catalog.FUBINI_INTEGRANDS["gauss_xs"], Box.interval(0, 1), level=8)


def test_fubini_improper_separable(wiener):
    h = lambda pts, s: np.exp(-pts[:, :1] ** 2) * (1 + s)[None, :]
    res = fubini_improper_residual(wiener, h, Exhaustion(1, 0.75, 5, 6), level=8)
    expected = math.sqrt(math.pi) * integrate_det(wiener, lambda s: 1 + s).samples
    assert res.residual <= 0.03
    assert np.allclose(res.rhs.samples, expected, atol=1e-8)


def test_fubini_improper_compact_support_reduces(wiener):
    h = lambda pts, s: np.where(np.abs(pts[:, :1]) < 0.5, 1.0, 0.0) * s[None, :] + 0 * s[None, :]
    ex = Exhaustion(1, 0.5, 3, 6)
    res = fubini_improper_residual(wiener, h, ex, level=8)
    box = fubini_residual(wiener, h, ex.box(0), level=8)
    assert np.allclose(res.rhs.samples, box.rhs.samples, atol=1e-12)


def test_fubini_improper_gauss_xs(wiener):
    res = fubini_improper_residual(wiener, catalog.FUBINI_INTEGRANDS["gauss_xs"], Exhaustion(1, 0.75, 4, 6), level=8)
    assert res.residual <= 0.03


def test_product_oracles(ps):
    unit = Box.interval(0, 1)
    xs = DeterministicField(lambda p: p[:, 0] * p[:, 1], ps.space_id, ps.path_count, 2)
    a, b = iterated_product_residual(xs, unit, unit, 6)
    for r in (a, b):
        assert abs(r.lhs.samples[0] - 0.25) < 1e-12 and abs(r.rhs.samples[0] - 0.25) < 1e-12
    eta = ps.normal("eta")
    const = FactorField(eta[:, None], [lambda p: np.ones(len(p))], ps.space_id, 2)
    B, S = Box.interval(0, 2), Box.interval(0, 0.5)
    a, b = iterated_product_residual(const, B, S, 5)
    assert np.allclose(a.lhs.samples, eta, atol=1e-12)
    assert np.allclose(b.rhs.samples, eta, atol=1e-12)


def test_product_wiener(wiener):
    unit = Box.interval(0, 1)
    a, b = iterated_product_residual(catalog.product_field(wiener), unit, unit, 7)
    assert a.residual <= 0.02 and b.residual <= 0.02


def test_product_unbounded_first_factor(ps, wiener):
    path = DriverPathField(wiener)
    f = RandomField(lambda p: path.sample(p[:, 1:2]) * np.exp(-p[:, 0] ** 2)[None, :], ps.space_id, ps.path_count, 2)
    a, b = iterated_product_residual(f, Exhaustion(1, 1.0, 4, 4), Box.interval(0, 1), 7)
    assert a.residual <= 0.02 and b.residual <= 0.02


def test_product_dimension_guard(ps):
    f = DeterministicField(lambda p: p[:, 0], ps.space_id, ps.path_count, 1)
    with pytest.raises(DomainError):
        iterated_product_residual(f, Box.interval(0, 1), Box.interval(0, 1))


def test_triangle_oracles(ps):
    one = catalog.make_interval_field("one", ps)
    res = triangle_identity_residual(one, 1.0, 8)
    assert abs(res.lhs.samples[0] - 0.5) < 1e-9 and abs(res.rhs.samples[0] - 0.5) < 1e-9
    v = catalog.make_interval_field("v", ps)
    res = triangle_identity_residual(v, 1.0, 8)
    assert abs(res.lhs.samples[0] - 1 / 6) <= 1e-4 and abs(res.rhs.samples[0] - 1 / 6) <= 1e-4


def test_triangle_wiener(ps, wiener):
    res = triangle_identity_residual(DriverPathField(wiener), 1.0, 8)
    assert res.residual <= 0.02
    assert res.non_increasing(2 / math.sqrt(ps.path_count))


def test_triangle_inconclusive_on_rough_field(ps):
    f = RandomField(lambda p: np.random.default_rng(len(p)).standard_normal((ps.path_count, len(p))) * len(p), ps.space_id, ps.path_count)
    with pytest.raises(InconclusiveError):
        triangle_identity_residual(f, 1.0, 6)


def test_parts_oracles(ps, wiener):
    g, dg = catalog.PARTS_WEIGHTS["one"]
    res = parts_identity_residual(DriverPathField(wiener), g, dg, 1.0, 8, n_trace=1)
    assert np.max(np.abs(res.lhs.samples - res.rhs.samples)) <= 1e-6
    g, dg = catalog.PARTS_WEIGHTS["identity"]
    res = parts_identity_residual(catalog.make_interval_field("one", ps), g, dg, 1.0, 8, n_trace=1)
    assert abs(res.lhs.samples[0] - 1.0) <= 1e-6 and abs(res.rhs.samples[0] - 1.0) <= 1e-6


def test_parts_exp_wiener(wiener):
    res = parts_identity_residual(DriverPathField(wiener), np.exp, np.exp, 1.0, 8)
    assert res.residual <= 0.02


def test_parts_requires_derivative(wiener):
    with pytest.raises(PreconditionError):
        parts_identity_residual(DriverPathField(wiener), np.exp, None)


def test_interval_field_guards(ps):
    f = DeterministicField(lambda p: p[:, 0], ps.space_id, ps.path_count, 2)
    with pytest.raises(DomainError):
        triangle_identity_residual(f)
    with pytest.raises(DomainError):
        triangle_identity_residual(catalog.make_interval_field("v", ps), s=0.0)
