"""Calibrated, adaptive Gaussian ODE filters and smoothers."""

from .baseline import dp5_solve, reference_solution
from .calibration import DiffusionModel
from .control import ControllerConfig
from .filtering import LinearizationOrder
from .gaussian import GaussianState
from .metrics import chi_square, work_precision
from .prior import IWPPrior, iwp_transitions
from .problems import IVProblem, analytic_value, available_problems, get_problem
from .solver import ODEPosterior, Outcome, SolverSpec, solve, solve_adaptive, solve_fixed

__all__ = [
    "ControllerConfig",
    "DiffusionModel",
    "GaussianState",
    "IVProblem",
    "IWPPrior",
    "LinearizationOrder",
    "ODEPosterior",
    "Outcome",
    "SolverSpec",
    "analytic_value",
    "chi_square",
    "dp5_solve",
    "reference_solution",
    "work_precision",
    "available_problems",
    "get_problem",
    "iwp_transitions",
    "solve",
    "solve_adaptive",
    "solve_fixed",
]
