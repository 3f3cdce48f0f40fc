"""Named integrands, forcings, initial values and test functions for scenario configs.

Configs refer to these by name instead of carrying expressions, so every run
is reproducible from its config file alone.
"""

import numpy as np

from .parabolic import Constant, TestFunction
from .riemann import DeterministicField, DriverPathField, FactorField, RandomField
from .spde import Forcing


def _gauss(pts):
    return np.exp(-np.sum(pts * pts, axis=1))


# h(points (N, d), s (K,)) -> (N, K); domination witness in the comment
FUBINI_INTEGRANDS = {
    # |h| <= 1 + s
    "gauss_x_lin_s": lambda pts, s: _gauss(pts)[:, None] * (1.0 + s[None, :]),
    # |h| <= 1, int |h| dx <= sqrt(pi)
    "gauss_xs": lambda pts, s: np.exp(-np.sum(pts * pts, axis=1)[:, None] * (1.0 + s[None, :])),
    # |h| <= 1 on x, s >= 0
    "exp_decay_xs": lambda pts, s: np.exp(-pts[:, :1] * s[None, :]),
    # |h| <= 1
    "separable_x_cos_s": lambda pts, s: pts[:, :1] * np.cos(np.pi * s[None, :]),
}

FORCINGS = {
    "zero": None,
    "one": Forcing.constant(1.0, "one"),
    "gauss_x": Forcing.spatial(_gauss, "gauss_x"),
    "gauss_x_decay_t": Forcing(lambda pts, s: _gauss(pts) * np.exp(-s), True, "gauss_x_decay_t"),
}

INITIALS = ("zero", "one", "gauss", "gauss_random")

TEST_FUNCTIONS = {
    "gauss": lambda dim: TestFunction((0.0,) * dim, 1.0),
    "gauss_narrow_shifted": lambda dim: TestFunction((0.5,) * dim, 2.0),
    "gauss_quadratic": lambda dim: TestFunction((0.0,) * dim, 1.0, 1.0, (0.3,) * dim, np.eye(dim) * 0.5),
}

# one-dimensional fields on [0, s] for the triangle and parts identities
INTERVAL_FIELDS = ("one", "v", "wiener_path")

# g and its derivative for the parts identity
PARTS_WEIGHTS = {
    "one": (lambda u: np.ones_like(u), lambda u: np.zeros_like(u)),
    "identity": (lambda u: u, lambda u: np.ones_like(u)),
    "exp": (np.exp, np.exp),
}

SEMIGROUP_FUNCTIONS = {
    "gauss": lambda dim: TestFunction((0.0,) * dim, 1.0),
    "one": lambda dim: Constant(1.0, dim),
}


def make_initial(name, ps, dim=1):
    """Initial value by catalog name; ``gauss_random`` is ``Z exp(-|x|^2)`` with ``Z ~ N(0, 1)``."""
    if name == "zero":
        return None
    if name == "one":
        return Constant(1.0, dim)
    if name == "gauss":
        return TestFunction((0.0,) * dim, 1.0)
    if name == "gauss_random":
        z = ps.normal("initial/gauss_random")
        return FactorField(z[:, None], [_gauss], ps.space_id, dim, "gauss_random")
    raise KeyError(name)


def make_interval_field(name, ps, driver=None):
    if name == "one":
        return DeterministicField(lambda p: np.ones(len(p)), ps.space_id, ps.path_count, 1, "one")
    if name == "v":
        return DeterministicField(lambda p: p[:, 0], ps.space_id, ps.path_count, 1, "v")
    if name == "wiener_path":
        if driver is None:
            raise KeyError("wiener_path needs a driver")
        return DriverPathField(driver)
    raise KeyError(name)


def product_field(driver):
    """``f(x, s) = W(s) exp(-x)`` on ``[0, 1]^2``, with ``W`` the driver's path."""
    path = DriverPathField(driver)
    return RandomField(
        lambda p: path.sample(p[:, 1:2]) * np.exp(-p[:, 0])[None, :],
        driver.space_id,
        driver.path_count,
        2,
        "W(s) exp(-x)",
    )
