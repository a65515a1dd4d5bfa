"""kmbatch: mini-batch stochastic Krasnosel'skii-Mann fixed-point solvers.

The package solves x = T(x) for the average T of n nonexpansive component
maps by relaxed iterations on sampled component batches, with schedule
condition certificates, problem generators with known fixed points, exact
enumeration audits of the underlying stochastic estimates, and empirical
convergence-rate tooling.
"""
from .analysis import (
    AuditReport,
    FloorEstimate,
    RateFit,
    RateReport,
    alpha_over_batch_tail,
    dominance_check,
    fit_rate,
    floor_decrease_pvalue,
    floor_estimate,
    inequality_audit,
    min_residual_bound,
    nonexpansivity_slack,
)
from .core import (
    EnumerationBudgetError,
    NumericFailureError,
    RngStream,
    ScheduleOverflowError,
    TraceRecord,
    check_rng,
    check_vector,
    vector_norm,
)
from .operators import (
    BallProjection,
    BoxProjection,
    CocoerciveStep,
    ComponentOperator,
    GradientStep,
    HalfspaceProjection,
    LinearScale,
    OperatorFamily,
    power_iteration,
)
from .problems import (
    ProblemInstance,
    certify_sigma,
    load_instance,
    make_feasibility,
    make_minimization,
    make_zero_point,
    save_instance,
)
from .schedules import (
    BatchSchedule,
    ConstantBatch,
    ConstantStep,
    DiminishingStep,
    ExponentialBatch,
    PolynomialBatch,
    ScheduleCertificate,
    StepSchedule,
    certify_conditions,
    step_sum_lower_bound,
    tail_constant,
)
from .solver import AggregateTrace, MiniBatchKM, RunTrace, aggregate_traces, km_step

__version__ = "0.1.0"

__all__ = [
    "AggregateTrace",
    "AuditReport",
    "BallProjection",
    "BatchSchedule",
    "BoxProjection",
    "CocoerciveStep",
    "ComponentOperator",
    "ConstantBatch",
    "ConstantStep",
    "DiminishingStep",
    "EnumerationBudgetError",
    "ExponentialBatch",
    "FloorEstimate",
    "GradientStep",
    "HalfspaceProjection",
    "LinearScale",
    "MiniBatchKM",
    "NumericFailureError",
    "OperatorFamily",
    "PolynomialBatch",
    "ProblemInstance",
    "RateFit",
    "RateReport",
    "RngStream",
    "RunTrace",
    "ScheduleCertificate",
    "ScheduleOverflowError",
    "StepSchedule",
    "TraceRecord",
    "aggregate_traces",
    "alpha_over_batch_tail",
    "certify_conditions",
    "certify_sigma",
    "check_rng",
    "check_vector",
    "dominance_check",
    "fit_rate",
    "floor_decrease_pvalue",
    "floor_estimate",
    "inequality_audit",
    "km_step",
    "load_instance",
    "make_feasibility",
    "make_minimization",
    "make_zero_point",
    "min_residual_bound",
    "nonexpansivity_slack",
    "power_iteration",
    "save_instance",
    "step_sum_lower_bound",
    "tail_constant",
    "vector_norm",
]
