"""Standard-form second-order cone programming."""

from .cones import NonNegative, RotatedSecondOrder, SecondOrder, Zero, cone_violation, in_cone
from .ipm import InteriorPointSolver, solve
from .program import (
    ConeProgram,
    ConeProgramBuilder,
    ConicFormatError,
    QuadraticTerm,
    SolverResult,
    SolverSettings,
    SolverStatus,
    lower_quadratic_objective,
)
from .scaling import Unscaling, presolve_scale

__all__ = [
    "ConeProgram",
    "ConeProgramBuilder",
    "ConicFormatError",
    "InteriorPointSolver",
    "NonNegative",
    "QuadraticTerm",
    "RotatedSecondOrder",
    "SecondOrder",
    "SolverResult",
    "SolverSettings",
    "SolverStatus",
    "Unscaling",
    "Zero",
    "cone_violation",
    "in_cone",
    "lower_quadratic_objective",
    "presolve_scale",
    "solve",
]
