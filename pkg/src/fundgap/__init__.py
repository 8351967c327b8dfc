"""Numerical checks of the fundamental gap inequality ``lambda1 - lambda0 >= 3 pi^2 / D^2``.

Modules: :mod:`~fundgap.domain` (geometry), :mod:`~fundgap.potential`,
:mod:`~fundgap.eigensolver` (grid eigenpairs), :mod:`~fundgap.groundfield`
(continuous ``grad log phi0``), :mod:`~fundgap.coupling` (reflection-coupled
diffusions), :mod:`~fundgap.verify` (checks) and :mod:`~fundgap.cli`.
"""
from .coupling import Outcome, SimConfig, reflection_matrix, simulate, simulate_ensemble, step_pair
from .domain import Disk, Ellipse, Interval, Polygon, Rectangle, domain_from_spec
from .eigensolver import GroundState, assemble, lowest_eigenpairs, solve, solve_1d
from .groundfield import F, LogGradientField, psi, psi_prime
from .potential import EvenPolynomial1D, Linear, Quadratic, SumPotential, Zero, potential_from_spec
from .report import VerificationReport

__version__ = "0.1.0"

__all__ = [
    "Disk", "Ellipse", "EvenPolynomial1D", "F", "GroundState", "Interval", "Linear",
    "LogGradientField", "Outcome", "Polygon", "Quadratic", "Rectangle", "SimConfig",
    "SumPotential", "VerificationReport", "Zero", "assemble", "domain_from_spec",
    "lowest_eigenpairs", "potential_from_spec", "psi", "psi_prime", "reflection_matrix",
    "simulate", "simulate_ensemble", "solve", "solve_1d", "step_pair",
]
