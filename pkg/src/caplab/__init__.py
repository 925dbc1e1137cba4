"""Dirichlet capacity and eigenvalue stability on masked finite-difference grids."""

__version__ = "0.1.0"

from .capacity import dirichlet_capacity, electrostatic_capacity
from .domain import GridDomain, Region, excise, make_ball, make_box, make_ellipsoid, spiked_ball
from .report import ExperimentReport
from .spectral import SpectralData, solve_domain

__all__ = [
    "ExperimentReport",
    "GridDomain",
    "Region",
    "SpectralData",
    "__version__",
    "dirichlet_capacity",
    "electrostatic_capacity",
    "excise",
    "make_ball",
    "make_box",
    "make_ellipsoid",
    "solve_domain",
    "spiked_ball",
]
