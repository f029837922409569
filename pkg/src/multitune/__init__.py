"""multitune: multitask and transfer-learning autotuning.

Tunes the parameters of a black-box application jointly over a set of tasks
through a shared multi-output Gaussian process (linear coregionalization),
then transfers that knowledge to new tasks, either by predicting their optima
outright (TLA1) or by centered sampling plus incremental model extension
(TLA2).
"""

from .errors import (
    ConfigError,
    InvalidConfigurationError,
    MultituneError,
    NumericalError,
    ObjectiveError,
    RegressionError,
    SamplingExhaustedError,
)
from .spaces import (
    Configuration,
    Constraint,
    DerivedRule,
    Dimension,
    OutputSpace,
    ParameterSpace,
    load_space,
    pdgeqrf_desk_task_space,
    pdgeqrf_input_space,
    pdgeqrf_task_space,
    save_space,
    unit_space,
)
from .sampling import (
    RngState,
    SampleBatch,
    centered_sample,
    constrained_sample,
    lhs,
    sample_inputs_heterotropic,
    sample_tasks,
)
from .gp import (
    GPFitConfig,
    GPModel,
    KernelParams,
    TargetTransform,
    fit_gp,
    gp_predict,
    kernel_eval,
    kernel_matrix,
    log_marginal_likelihood,
    posterior,
)
from .lcm import (
    LCMFitConfig,
    LCMHyper,
    LCMModel,
    TaskBlockIndex,
    assemble_cov,
    chol_append,
    extend_model,
    fit_lcm,
    lcm_log_likelihood,
    lcm_predict,
)
from .objectives import (
    DEFAULT_COEFFICIENTS,
    EvaluationRecord,
    FactorCounts,
    MachineCoefficients,
    Objective,
    SyntheticFamily,
    command_objective,
    evaluate,
    fit_coefficients,
    qr_factor_counts,
    qr_objective,
    qr_spaces,
    qr_surrogate_runtime,
    synthetic_family,
)
from .tuner import (
    Budget,
    OptimumPredictor,
    PsoConfig,
    RestartAdvice,
    Tla1Prediction,
    TuningResult,
    collect_optima,
    ego_single,
    ei_value,
    expected_improvement,
    mla,
    optimize_acquisition,
    random_search,
    restart_advice,
    tla1_fit,
    tla1_predict,
    tla2,
)
from .harness import (
    ComparisonReport,
    ExperimentConfig,
    TuningHistory,
    build_experiment,
    compare,
    grid_search,
    report_optima_table,
    run,
    warm_start,
)

__version__ = "0.1.0"
