"""Equitable multi-task optimisation with relative-rate variance regularisation."""

from ._kernels import backend
from .core import (
    EmtlConfig,
    GradientSet,
    InvalidInputError,
    RelativeRates,
    TaskEvaluation,
    TrajectoryRecord,
    effective_weights,
    gradient_norm,
    relative_rates,
    variance_objective,
)
from .harness import RunConfig, RunError, RunFailure, RunResult, run, run_grid, theorem1_diagnostic
from .minnorm import MinNormSolution, minnorm_2, minnorm_fw
from .mirror import PlayerState, player_init, player_step
from .problems import ProblemSpec, evaluate, fd_gradient, make_quad2, make_synthreg
from .weighting import (
    STRATEGIES,
    StrategyOutput,
    banditmtl_step,
    emtl_step,
    imtl_g_step,
    linear_scalarization,
    mgda_step,
)

__version__ = "0.1.0"
