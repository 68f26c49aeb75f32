"""scoreloop: simulate and analyse the feedback dynamics of deployed risk scores.

A deployed predictive score drives interventions that change the very
outcomes it predicts.  This package models that loop explicitly: a causal
mechanism, score-driven interventions grouped into covariate blocks, and
epoch-by-epoch updating strategies (drop-in replacement, layered
interventions, holdout shielding, controlled interventions), together with
the tools to study the induced recursions, reproduce the standard numeric
counterexamples, and run everything from declarative configs.
"""
from .model import (
    AdditiveShift,
    Blend,
    CallableScore,
    ConstantScore,
    CovariateBatch,
    CovariateState,
    CustomIntervention,
    CustomMechanism,
    Dimensions,
    DiscreteAtoms,
    GaussianDiagonal,
    Identity,
    Intervention,
    LinearPull,
    LogShift,
    LogisticLinear,
    LogisticScore,
    Mechanism,
    Population,
    ScaledLogShift,
    Score,
    SigmoidPull,
    ThresholdRule,
    eval_intervention,
    eval_mechanism,
    eval_score,
    register_intervention,
    register_mechanism,
)
from .sampling import Dataset, RngSeed, make_dataset, sample_covariates, sample_outcomes
from .estimators import (
    EmptyCellError,
    FitReport,
    OracleConfig,
    OracleScore,
    fit_logistic,
    fit_on_holdout,
    fit_threshold,
    oracle_score,
    oracle_score_estimate,
)
from .dynamics import (
    CONVERGED,
    OSCILLATING,
    UNDETERMINED,
    ContractionRegion,
    ContractionReport,
    EpochRecord,
    FixedPointScore,
    HMap,
    NoSignChangeError,
    RecursionReport,
    classify_recursion,
    contraction_certificate,
    find_fixed_point,
    h_derivative,
    h_eval,
    run_longitudinal,
    run_naive,
    sweep_recursion,
)
from .adjuvancy import (
    CONVERGED_TO_EQ,
    NON_CONVERGED,
    AdjuvancyReport,
    BracketFailureError,
    EquilibriumSpec,
    InterventionChain,
    NoEquilibriumError,
    classify_adjuvancy,
    find_rho_eq,
    h2_eval,
    run_adjuvancy,
    sweep_adjuvancy,
)
from .evaluation import (
    CostSpec,
    LinearInShift,
    MetricEstimate,
    MetricPipeline,
    ReproductionReport,
    TargetCheck,
    cost,
    effective_risk,
    expected_metric,
    metric_m,
    objective,
    reproduce,
)
from .control import (
    ControlStepResult,
    InterventionFamily,
    NaiveUpdatePolicy,
    NoFeasiblePointError,
    PomdpEnvironment,
    control_step,
    pomdp_rollout,
    run_control_loop,
    scaled_log_shift_family,
)

__version__ = "0.1.0"
