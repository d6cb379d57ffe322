"""Online revenue maximization under lower/upper cost bounds via dual mirror
descent, with exact small-scale oracles and two benchmark simulators."""

from .core import (
    NEG_INF,
    BoundSpec,
    ContextDraw,
    DualVector,
    ProblemInstance,
    dual_price,
    primal_oracle,
    stochastic_subgradient,
    subgradient_from_cost,
)
from .controller import (
    BudgetLedger,
    RunReport,
    RunTrace,
    run_batch,
    run_episode,
)
from .learners import LearnerSpec, LearnerState, learner_emit, learner_update, make_learner
from .mirror import ReferenceFunction, StepSchedule, bregman, dual_step
from .metrics import AggregateReport, compute_regret, emit_report, moving_average

__all__ = [
    "NEG_INF",
    "BoundSpec",
    "ContextDraw",
    "DualVector",
    "ProblemInstance",
    "dual_price",
    "primal_oracle",
    "stochastic_subgradient",
    "subgradient_from_cost",
    "BudgetLedger",
    "RunReport",
    "RunTrace",
    "run_batch",
    "run_episode",
    "LearnerSpec",
    "LearnerState",
    "learner_emit",
    "learner_update",
    "make_learner",
    "ReferenceFunction",
    "StepSchedule",
    "bregman",
    "dual_step",
    "AggregateReport",
    "compute_regret",
    "emit_report",
    "moving_average",
]

__version__ = "0.1.0"
