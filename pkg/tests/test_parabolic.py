import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochriemann import _kernels as K
from stochriemann.errors import CoverageError, DomainError, GridError, ParameterError
from stochriemann.parabolic import (
    Constant,
    EllipticOperator,
    GridFunction,
    TestFunction,
    UniformGrid,
    adjoint_apply,
    apply_semigroup,
    crank_nicolson,
    evolved_test_function,
    gaussian_semigroup_1d,
    kernel_bound_check,
    kernel_validation,
    semigroup_identity_residual,
)
from stochriemann.riemann import Box, classical_integral

HEAT = EllipticOperator.heat(1)


def test_kernel_peak_value():
    t = 1 / (4 * math.pi)
    assert HEAT.kernel(np.array([0.3]), np.array([0.3]), t) == pytest.approx(1.0, rel=1e-14)


def test_kernel_requires_positive_time():
    with pytest.raises(DomainError):
        HEAT.kernel(np.array([0.0]), np.array([0.0]), 0.0)


def test_operator_validation():
    with pytest.raises(ParameterError):
        EllipticOperator(-1.0)
    with pytest.raises(ParameterError):
        EllipticOperator([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ParameterError):
        EllipticOperator(np.eye(3))
    with pytest.raises(ParameterError):
        EllipticOperator(1.0, [1.0, 2.0])


@pytest.mark.parametrize("op", [HEAT, EllipticOperator(0.5, 0.7, 0.0), EllipticOperator(2.0, -0.4, -0.3)])
@pytest.mark.parametrize("t", [0.1, 0.5, 1.0])
def test_mass_identity(op, t):
    r = op.radius(t)
    x = 0.2
    mass = classical_integral(lambda y: op.kernel(np.full((len(y), 1), x), y, t), Box.interval(x - r, x + r), panels=64)
    assert mass == pytest.approx(math.exp(op.c * t), abs=1e-8)


def test_kernel_symmetry_without_drift():
    op = EllipticOperator([[1.0, 0.3], [0.3, 0.8]], None, 0.2)
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((50, 2)), rng.standard_normal((50, 2))
    assert np.allclose(op.kernel(x, y, 0.4), op.kernel(y, x, 0.4), rtol=1e-13)


def test_kernel_validation_gate():
    rows = kernel_validation(HEAT, (0.1, 0.5), h=0.05, dt=1e-3)
    assert all(r.rel_linf <= 5e-3 for r in rows)
    assert all(r.mass_error <= 1e-8 for r in rows)
    drift = kernel_validation(EllipticOperator(1.0, 0.8, 0.0), (0.5,), h=0.05, dt=1e-3)
    assert drift[0].rel_linf <= 5e-3
    assert abs(drift[0].argmax_offset) <= 1e-3


def test_bound_constants_heat():
    b = kernel_bound_check(HEAT)
    assert b.holds
    assert b.C1 == pytest.approx((4 * math.pi) ** -0.5, rel=1e-2)
    assert b.C2 == pytest.approx(0.25, rel=1e-2)


def test_bound_drift_and_decay():
    heat = kernel_bound_check(HEAT)
    drift = kernel_bound_check(EllipticOperator(1.0, 1.0, 0.0))
    decay = kernel_bound_check(EllipticOperator(1.0, None, -0.5))
    assert drift.holds and drift.C2 < heat.C2
    assert decay.C1 <= heat.C1
    with pytest.raises(DomainError):
        kernel_bound_check(HEAT, t_range=(0.0, 1.0))


def test_semigroup_identity_at_zero():
    grid = UniformGrid.symmetric(2.0, 0.1)
    g = TestFunction((0.0,), 1.0)
    assert np.array_equal(apply_semigroup(HEAT, g, 0.0, grid).flat, g.value(grid.points()))
    assert semigroup_identity_residual(HEAT, g, 0.0, grid).residual == 0.0


def test_semigroup_preserves_constants():
    grid = UniformGrid.symmetric(3.0, 0.25)
    out = apply_semigroup(EllipticOperator(1.5, 0.3), Constant(1.0, 1), 0.7, grid)
    assert np.allclose(out.flat, 1.0, atol=1e-12)


@given(st.floats(0.2, 3.0), st.floats(0.05, 1.0), st.floats(-1.0, 1.0), st.floats(0.3, 2.0))
@settings(max_examples=20, deadline=None)
def test_gaussian_convolution_closed_form(alpha, t, b, a):
    op = EllipticOperator(a, b, 0.0)
    x = np.linspace(-2, 2, 21)
    got = apply_semigroup(op, TestFunction((0.0,), alpha), t, x[:, None])
    assert np.allclose(got, gaussian_semigroup_1d(op, alpha, t, x), atol=1e-9)


def test_gaussian_variance_grows_by_2t():
    # exp(-x^2/(2 s2)) -> variance s2 + 2t under the heat flow
    s2, t = 0.5, 0.3
    x = np.linspace(-3, 3, 31)
    got = apply_semigroup(HEAT, TestFunction((0.0,), 1 / (2 * s2)), t, x[:, None])
    expected = math.sqrt(s2 / (s2 + 2 * t)) * np.exp(-(x**2) / (2 * (s2 + 2 * t)))
    assert np.allclose(got, expected, atol=1e-10)


def test_semigroup_property():
    g = TestFunction((0.2,), 2.0)
    x = np.linspace(-2, 2, 17)[:, None]
    grid = UniformGrid.symmetric(9.0, 0.02)
    inner = apply_semigroup(HEAT, g, 0.2, grid)
    two_step = apply_semigroup(HEAT, inner, 0.3, x)
    assert np.max(np.abs(two_step - apply_semigroup(HEAT, g, 0.5, x))) <= 1e-6


def test_positivity():
    g = lambda p: np.maximum(0.0, 1 - np.abs(p[:, 0]))
    out = apply_semigroup(EllipticOperator(1.0, 0.5, -0.7), g, 0.4, np.linspace(-6, 6, 41)[:, None])
    assert np.all(out >= 0)


def test_coverage_error():
    small = GridFunction.from_function(UniformGrid.symmetric(1.0, 0.1), lambda p: np.exp(-p[:, 0] ** 2))
    with pytest.raises(CoverageError):
        apply_semigroup(HEAT, small, 0.5, np.array([[0.0]]))


def test_semigroup_identity_gaussian():
    grid = UniformGrid.symmetric(4.0, 0.05)
    assert semigroup_identity_residual(HEAT, TestFunction((0.0,), 1.0), 0.5, grid, 64).residual <= 1e-3


def test_semigroup_identity_constant_with_c():
    grid = UniformGrid.symmetric(2.0, 0.1)
    res = semigroup_identity_residual(EllipticOperator(1.0, None, 0.7), Constant(1.0, 1), 0.5, grid, 64)
    assert res.residual <= 1e-8


def test_semigroup_identity_finite_difference_path():
    grid = UniformGrid.symmetric(3.0, 0.05)
    g = lambda p: np.exp(-p[:, 0] ** 2)
    assert semigroup_identity_residual(HEAT, g, 0.5, grid, 64).residual <= 1e-3


def test_semigroup_two_dimensions():
    op = EllipticOperator([[1.0, 0.2], [0.2, 0.6]], [0.3, -0.1], 0.0)
    grid = UniformGrid.symmetric(1.0, 0.25, 2)
    assert semigroup_identity_residual(op, TestFunction((0.0, 0.0), 1.0), 0.3, grid, 32).residual <= 1e-3


def test_adjoint_self_adjoint_case():
    phi = TestFunction((0.1,), 1.3, 1.0, (0.2,), np.array([[0.4]]))
    x = np.linspace(-2, 2, 11)[:, None]
    assert np.allclose(adjoint_apply(HEAT, phi, x), HEAT.apply(phi, x))


@pytest.mark.parametrize("b, c", [(0.0, 0.0), (0.6, 0.0), (0.6, -0.4), (-1.0, 0.9)])
def test_adjoint_integral(b, c):
    op = EllipticOperator(1.2, b, c)
    phi = TestFunction((0.3,), 1.0, 1.0, (0.5,), np.array([[0.2]]))
    r = phi.decay_radius(1e-14)
    total = classical_integral(lambda p: adjoint_apply(op, phi, p), Box.interval(0.3 - r, 0.3 + r), panels=64)
    assert total == pytest.approx(c * phi.integral(), abs=1e-6)


def test_adjoint_at_gaussian_centre():
    b, c = 0.7, -0.2
    op = EllipticOperator(1.0, b, c)
    phi = TestFunction((0.5,), 2.0)
    x0 = np.array([[0.5]])
    assert phi.gradient(x0)[0, 0] == 0.0
    expected = phi.hessian(x0)[0, 0, 0] + c * phi.value(x0)[0]
    assert adjoint_apply(op, phi, x0)[0] == pytest.approx(expected, rel=1e-14)


def test_test_function_derivatives_by_differences():
    phi = TestFunction((0.1, -0.2), 0.8, 0.5, (0.3, -0.1), np.array([[0.2, 0.1], [0.1, -0.3]]))
    x = np.array([[0.3, 0.4]])
    e = 1e-5
    for i in range(2):
        dx = np.zeros((1, 2))
        dx[0, i] = e
        num = (phi.value(x + dx) - phi.value(x - dx)) / (2 * e)
        assert num[0] == pytest.approx(phi.gradient(x)[0, i], rel=1e-7, abs=1e-9)
        numg = (phi.gradient(x + dx) - phi.gradient(x - dx)) / (2 * e)
        assert np.allclose(numg[0], phi.hessian(x)[0, i], rtol=1e-6, atol=1e-8)


def test_evolved_function():
    grid = UniformGrid.symmetric(3.0, 0.05)
    phi = TestFunction((0.0,), 1.0)
    window = grid.points()
    dists = [np.max(np.abs(evolved_test_function(HEAT, phi, 1.0, 1.0 - lag, grid).values.flat - phi.value(window))) for lag in (0.1, 0.01, 0.001)]
    assert dists[0] > dists[1] > dists[2]
    psi = evolved_test_function(HEAT, phi, 1.0, 0.6, grid)
    assert psi.generator_residual() <= 1e-3
    # ds psi = -A psi, and under pure heat flow psi is Gaussian with variance 1/2 + 2(t - s)
    x = grid.points()[:, 0]
    var = 0.5 + 2 * 0.4
    assert np.allclose(psi.values.flat, math.sqrt(0.5 / var) * np.exp(-(x**2) / (2 * var)), atol=1e-10)
    with pytest.raises(DomainError):
        evolved_test_function(HEAT, phi, 1.0, 1.0, grid)


def test_crank_nicolson_heat():
    grid = UniformGrid.symmetric(3.0, 0.05)
    u = crank_nicolson(HEAT, lambda x: np.exp(-(x**2)), grid, [0.25, 0.5])
    x = grid.axes[0]
    for i, t in enumerate((0.25, 0.5)):
        assert np.max(np.abs(u[i] - gaussian_semigroup_1d(HEAT, 1.0, t, x))) <= 1e-3
    with pytest.raises(GridError):
        crank_nicolson(HEAT, lambda x: x * 0, grid, [0.0005])


def test_tridiag_backends_agree():
    rng = np.random.default_rng(2)
    n = 50
    lower, upper = rng.uniform(-1, 0, n), rng.uniform(-1, 0, n)
    diag = 3 + rng.uniform(0, 1, n)
    for rhs in (rng.standard_normal(n), rng.standard_normal((n, 3))):
        with K.use_backend("numpy"):
            ref = K.tridiag_solve(lower, diag, upper, rhs)
        with K.use_backend("numba"):
            got = K.tridiag_solve(lower, diag, upper, rhs)
        assert got.shape == rhs.shape
        assert np.allclose(ref, got, rtol=1e-12, atol=1e-12)


def test_grid_validation():
    with pytest.raises(GridError):
        UniformGrid((0.0,), (1.0,), 0.3)
    g = UniformGrid.symmetric(1.0, 0.5, 2)
    assert g.shape == (5, 5) and g.size == 25
    assert g.index_of(np.array([[0.0, 0.5]]))[0] == 13
    with pytest.raises(GridError):
        g.index_of(np.array([[0.1, 0.0]]))
