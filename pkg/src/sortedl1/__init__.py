"""Nonconvex sorted l1 minimization for sparse recovery."""
from .model import (
    FormatError,
    Permutation,
    Problem,
    SolveTrace,
    SuccessGrid,
    Termination,
    WeightSequence,
    apply_permutation,
    validate_weights,
)
from .penalty import Schedule, ScheduleKind, eval_sorted_l1, optimal_permutation, schedule_weights
from .prox import prox_sorted_l1
from .solvers import (
    Mode,
    SolverOptions,
    algorithm1_sorted_irl1,
    algorithm2_sorted_ist,
    weighted_bp,
    weighted_lasso,
)

__version__ = "0.1.0"
