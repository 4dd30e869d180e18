"""Two-timescale l1 estimator, its diagnostics and its rate bounds."""

from .bounds import (
    RateConstants,
    derive_rate_constants,
    generic_x_bound,
    theorem_bound,
    y_error_bound,
    y_recursion_bound,
)
from .diagnostics import (
    Decomposition,
    LemmaSlack,
    check_cross_ratio,
    check_lemma_inequalities,
    decomposition,
    martingale_increment,
)
from .steps import (
    EstimatorState,
    Mode,
    Trajectory,
    TrajectoryRecorder,
    async_step,
    async_y_update,
    checkpoint_grid,
    objective_f,
    objective_l2,
    run,
    sync_step,
    sync_y_update,
    worker_report,
)

__all__ = [
    "Decomposition",
    "EstimatorState",
    "LemmaSlack",
    "Mode",
    "RateConstants",
    "Trajectory",
    "TrajectoryRecorder",
    "async_step",
    "async_y_update",
    "check_cross_ratio",
    "check_lemma_inequalities",
    "checkpoint_grid",
    "decomposition",
    "derive_rate_constants",
    "generic_x_bound",
    "martingale_increment",
    "objective_f",
    "objective_l2",
    "run",
    "sync_step",
    "sync_y_update",
    "theorem_bound",
    "worker_report",
    "y_error_bound",
    "y_recursion_bound",
]
