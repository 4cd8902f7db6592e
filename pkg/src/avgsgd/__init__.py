"""Parallel SGD with model averaging: runtime, variance model, and experiments."""

from .objectives import (
    HomogeneousQuadratic,
    LeastSquares,
    LogisticRegression,
    Objective,
    OjaPcaStream,
    QuarticDoubleWell,
    ScalarNoisyQuadratic,
    oja_step,
    pca_error,
    random_homogeneous_quadratic,
)
from .sgd_core import (
    Constant,
    InverseTime,
    WorkerState,
    run_worker_phase,
    sgd_step,
    step_size,
    step_sizes,
)
from .parallel_runtime import (
    MINI_BATCH,
    Bernoulli,
    EveryK,
    OneShot,
    ParallelRunConfig,
    RunRecord,
    RunResult,
    average_models,
    parse_schedule,
    plan_phases,
    run_equivalence_harness,
    run_parallel,
    schedule_label,
)
from .variance_model import (
    ConvergenceError,
    CoarseBoundParams,
    VarianceEnvelope,
    coarse_variance_bound,
    compute_rho,
    envelope_bound,
    envelope_violations,
    find_optimum,
    fit_variance_envelope,
)
from .asymptotic_moments import (
    MomentParams,
    MomentState,
    UnstableParametersError,
    asymptotic_variance,
    contraction_rho,
    eta,
    expected_recurrence_step,
    fixed_point,
    iterate_recurrence,
    monte_carlo_variance,
    recurrence_step,
)
from .data_io import (
    EnvelopeRow,
    ExperimentRecord,
    LibsvmParseError,
    SparseDataset,
    build_objective,
    normalize_objective,
    parse_libsvm,
    read_libsvm,
    read_trace_csv,
    reshuffle,
    synthetic_least_squares,
    write_envelope_report,
    write_libsvm,
    write_trace_csv,
)

__all__ = [
    "Bernoulli",
    "CoarseBoundParams",
    "Constant",
    "ConvergenceError",
    "EnvelopeRow",
    "EveryK",
    "ExperimentRecord",
    "HomogeneousQuadratic",
    "InverseTime",
    "LeastSquares",
    "LibsvmParseError",
    "LogisticRegression",
    "MINI_BATCH",
    "MomentParams",
    "MomentState",
    "Objective",
    "OjaPcaStream",
    "OneShot",
    "ParallelRunConfig",
    "QuarticDoubleWell",
    "RunRecord",
    "RunResult",
    "ScalarNoisyQuadratic",
    "SparseDataset",
    "UnstableParametersError",
    "VarianceEnvelope",
    "WorkerState",
    "asymptotic_variance",
    "average_models",
    "build_objective",
    "coarse_variance_bound",
    "compute_rho",
    "contraction_rho",
    "envelope_bound",
    "envelope_violations",
    "eta",
    "expected_recurrence_step",
    "find_optimum",
    "fit_variance_envelope",
    "fixed_point",
    "iterate_recurrence",
    "monte_carlo_variance",
    "normalize_objective",
    "oja_step",
    "parse_libsvm",
    "parse_schedule",
    "pca_error",
    "plan_phases",
    "random_homogeneous_quadratic",
    "read_libsvm",
    "read_trace_csv",
    "recurrence_step",
    "reshuffle",
    "run_equivalence_harness",
    "run_parallel",
    "run_worker_phase",
    "schedule_label",
    "sgd_step",
    "step_size",
    "step_sizes",
    "synthetic_least_squares",
    "write_envelope_report",
    "write_libsvm",
    "write_trace_csv",
]
