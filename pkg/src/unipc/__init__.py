"""Unified predictor-corrector solvers for diffusion ODEs.

Fast deterministic sampling of diffusion probability-flow ODEs via
arbitrary-order exponential-integrator predictor-corrector steps in
half-log-SNR time, for both noise- and data-prediction models, plus a
convergence-study harness (see the `unipc` CLI).
"""

from .coeffs import (
    CoefficientSystem,
    VaryingCoefficientMatrix,
    bh_value,
    g_vector,
    phi_vector,
    psi,
    solve_weights,
    varphi,
    varying_coefficient_matrix,
)
from .errors import (
    DomainError,
    FitError,
    InsufficientHistoryError,
    NumericError,
    ReferenceAccuracyError,
    SingularSystemError,
    UniPCError,
    ValidationError,
)
from .model import (
    ModelEvaluator,
    SyntheticModel,
    convert_parameterization,
    dynamic_threshold,
    exact_solution_xfree,
)
from .schedule import NoiseSchedule, TimeGrid, make_time_grid
from .solver import (
    SampleResult,
    SolverConfig,
    SolverState,
    Thresholding,
    correct,
    ddim_step,
    predict,
    sample,
    unified_update,
)
from .study import ConvergenceStudy, OrderFit, emit, fit_order, reference_solution, run_study

__version__ = "0.1.0"

__all__ = [
    "CoefficientSystem",
    "ConvergenceStudy",
    "DomainError",
    "FitError",
    "InsufficientHistoryError",
    "ModelEvaluator",
    "NoiseSchedule",
    "NumericError",
    "OrderFit",
    "ReferenceAccuracyError",
    "SampleResult",
    "SingularSystemError",
    "SolverConfig",
    "SolverState",
    "SyntheticModel",
    "Thresholding",
    "TimeGrid",
    "UniPCError",
    "ValidationError",
    "VaryingCoefficientMatrix",
    "bh_value",
    "convert_parameterization",
    "correct",
    "ddim_step",
    "dynamic_threshold",
    "emit",
    "exact_solution_xfree",
    "fit_order",
    "g_vector",
    "make_time_grid",
    "phi_vector",
    "predict",
    "psi",
    "reference_solution",
    "run_study",
    "sample",
    "solve_weights",
    "unified_update",
    "varphi",
    "varying_coefficient_matrix",
]
