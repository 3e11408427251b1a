"""dwtree: depth-weighted random tree simulation and analytics.

Grow random recursive trees where a new vertex picks its parent with
probability proportional to a weight f(depth(parent)), for arbitrary weight
families — from constant (uniform attachment) to factorial-power growth —
and measure depth/profile statistics against the exact laws the model
satisfies.
"""

__version__ = "0.1.0"

from .analytics import (
    AccumulationEvent,
    BoundCheckReport,
    CoverMap,
    a_value,
    accumulations_to_csv,
    cover_map,
    covering_walk,
    expected_level_count,
    find_accumulations,
    markov_depth_bound,
    moment_g,
    product_moment_report,
)
from .branching import (
    BirthEvent,
    BranchingRun,
    CoupledRun,
    ExponentialLadder,
    coupled_run,
    sample_f_tail,
    sample_ladder,
    simulate_branching,
)
from .errors import BudgetError, ConfigError, ToleranceError
from .experiments import (
    BetaFit,
    ExperimentConfig,
    ExperimentResult,
    GridSpec,
    ResultRow,
    StatSummary,
    emit,
    estimate_beta,
    resolve_threads,
    run_experiment,
)
from .growth import (
    AttachmentRecord,
    Checkpoint,
    GrowthTrace,
    ProfileState,
    TreeStorage,
    grow_profile,
    grow_tree,
    new_state,
    step,
)
from .weights import (
    UNBOUNDED,
    RegimeReport,
    WeightSpec,
    base_log_table,
    classify_regime,
    constant,
    custom,
    exponential,
    factorial_power,
    geometric_mean_weight,
    log_weight,
    logarithmic,
    periodic,
    polynomial,
    psi,
    stretched_exp,
    sub_exp_quotient,
    super_exp,
    table,
    tail_ratio_sum,
    weight_scale,
)
from .verify import CheckResult, VerifyReport, verify

__all__ = [
    "AccumulationEvent",
    "AttachmentRecord",
    "BetaFit",
    "BirthEvent",
    "BoundCheckReport",
    "BranchingRun",
    "BudgetError",
    "CheckResult",
    "Checkpoint",
    "ConfigError",
    "CoupledRun",
    "CoverMap",
    "ExperimentConfig",
    "ExperimentResult",
    "ExponentialLadder",
    "GridSpec",
    "GrowthTrace",
    "ProfileState",
    "ResultRow",
    "StatSummary",
    "ToleranceError",
    "TreeStorage",
    "VerifyReport",
    "UNBOUNDED",
    "RegimeReport",
    "WeightSpec",
    "a_value",
    "accumulations_to_csv",
    "cover_map",
    "covering_walk",
    "coupled_run",
    "emit",
    "estimate_beta",
    "expected_level_count",
    "find_accumulations",
    "grow_profile",
    "grow_tree",
    "markov_depth_bound",
    "moment_g",
    "new_state",
    "product_moment_report",
    "resolve_threads",
    "run_experiment",
    "sample_f_tail",
    "sample_ladder",
    "simulate_branching",
    "step",
    "verify",
    "base_log_table",
    "classify_regime",
    "constant",
    "custom",
    "exponential",
    "factorial_power",
    "geometric_mean_weight",
    "log_weight",
    "logarithmic",
    "periodic",
    "polynomial",
    "psi",
    "stretched_exp",
    "sub_exp_quotient",
    "super_exp",
    "table",
    "tail_ratio_sum",
    "weight_scale",
    "__version__",
]
