"""Riemann integrals of random functions, stochastic-measure interchange
identities and a parabolic SPDE solver, all checked by Monte Carlo under the
Ky Fan metric."""

from .drivers import Driver, make_driver, measure
from .errors import InconclusiveError, StochRiemannError
from .parabolic import EllipticOperator, UniformGrid
from .prob import Ensemble, ProbSpace, ky_fan
from .riemann import Box, Exhaustion, RandomField, improper_integral, riemann_integral
from .spde import Forcing, ProblemData, mild_solution, weak_residual

__version__ = "0.1.0"

__all__ = [
    "Box",
    "Driver",
    "EllipticOperator",
    "Ensemble",
    "Exhaustion",
    "Forcing",
    "InconclusiveError",
    "ProbSpace",
    "ProblemData",
    "RandomField",
    "StochRiemannError",
    "UniformGrid",
    "improper_integral",
    "ky_fan",
    "make_driver",
    "measure",
    "mild_solution",
    "riemann_integral",
    "weak_residual",
]
