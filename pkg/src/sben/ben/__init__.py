"""The discrete symplectic BEN principle: residuals, solvers and diagnostics."""

from ..grid import TimeGrid, Trajectory
from .core import (
    BenReport,
    PreconditionError,
    SolverOptions,
    StepTerms,
    action_value,
    dissipation_inequality,
    energy_balance,
    integral_of_motion_check,
    make_report,
    step_residual,
    step_terms,
    time_integrated_inequality,
    variational_inequality_check,
)
from .solvers import ConvergenceError, InfeasibleStartError, global_solve, incremental_solve

__all__ = [
    "BenReport", "ConvergenceError", "InfeasibleStartError", "PreconditionError", "SolverOptions",
    "StepTerms", "TimeGrid", "Trajectory", "action_value", "dissipation_inequality", "energy_balance",
    "global_solve", "incremental_solve", "integral_of_motion_check", "make_report", "step_residual",
    "step_terms", "time_integrated_inequality", "variational_inequality_check",
]
