"""Adaptive Crank-Nicolson / B-spline Galerkin solver for linear
Schrodinger equations in one space dimension, with a posteriori error
estimators for time, space, coarsening and data errors.
"""
from .adaptive import AdaptiveConfig, AdaptiveRun, StepRecord, run_adaptive
from .estimators import (
    EstimatorTotals,
    StepEstimators,
    eta_space,
    eta_space_pair,
    initial_quantities,
    step_estimators,
)
from .harness import (
    EocTable,
    Reference,
    RunConfig,
    UniformResult,
    eoc,
    make_reference,
    run_adaptive_experiment,
    run_observable_study,
    run_sensitivity,
    run_sensitivity_grid,
    run_table,
    run_uniform,
)
from .mesh import MacroMesh, Mesh1D
from .problems import ProblemSpec, catalog, current_density, position_density
from .scheme import StepResult, StepState, advance, cn_step, initial_state
from .spline import FeFunction, SplineSpace

__version__ = "0.1.0"

__all__ = [
    "AdaptiveConfig",
    "AdaptiveRun",
    "EocTable",
    "EstimatorTotals",
    "FeFunction",
    "MacroMesh",
    "Mesh1D",
    "ProblemSpec",
    "Reference",
    "RunConfig",
    "SplineSpace",
    "StepEstimators",
    "StepRecord",
    "StepResult",
    "StepState",
    "UniformResult",
    "advance",
    "catalog",
    "cn_step",
    "current_density",
    "eoc",
    "eta_space",
    "eta_space_pair",
    "initial_quantities",
    "initial_state",
    "make_reference",
    "position_density",
    "run_adaptive",
    "run_adaptive_experiment",
    "run_observable_study",
    "run_sensitivity",
    "run_sensitivity_grid",
    "run_table",
    "run_uniform",
    "step_estimators",
    "__version__",
]
