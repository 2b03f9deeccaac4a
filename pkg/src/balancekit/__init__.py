"""balancekit: covariate balancing weights for causal effect estimation.

A six-step workflow for binary-treatment observational studies: inspect
overlap and trim, fit balancing weights by several routes (logistic
regression, boosted trees, covariate balancing propensity scores, entropy
balancing), compare covariate balance, estimate the effect with a
doubly-robust weighted regression, and probe sensitivity to an omitted
confounder.
"""

from .balance import (
    BalanceRow,
    BalanceSummary,
    MethodRanking,
    balance_table,
    ess,
    recommend_method,
    smd,
    weighted_ks,
    weighted_mean,
    weighted_sd,
)
from .estimators import (
    METHOD_IDS,
    EstimatorConfig,
    GbmHyperparameters,
    RunResult,
    run_all,
)
from .dataset import (
    Column,
    ColumnRole,
    Dataset,
    DesignMatrix,
    RoleKind,
    Tail,
    TrimRule,
    apply_trim,
    assign_roles,
    design_matrix,
    load_csv,
    overlap_report,
    summarize,
)
from .outcome import (
    EffectEstimate,
    EffectModel,
    doubly_robust_effect,
    weighted_means_effect,
)
from .report import balance_csv, build_report, render_markdown, weights_csv
from .sensitivity import (
    CellResult,
    ObservedConfounderPoint,
    ReweightMethod,
    SensitivityAnalysis,
    SensitivityConfig,
    SensitivityGrid,
    observed_points,
    ov_analysis,
    simulate_cell,
)
from .session import (
    ASSOCIATIONAL_STAMP,
    Session,
    SessionStore,
    StaleJobError,
    Step,
    StepOrderError,
)
from .synthetic import SyntheticData, confounded_linear, null_linear
from .weights import (
    Estimand,
    WeightSet,
    clip_ps,
    normalize_weights,
    ps_overlap_summary,
    ps_to_weights,
)

__version__ = "0.1.0"

__all__ = [
    "ASSOCIATIONAL_STAMP",
    "BalanceRow",
    "BalanceSummary",
    "CellResult",
    "Column",
    "ColumnRole",
    "Dataset",
    "DesignMatrix",
    "EffectEstimate",
    "EffectModel",
    "Estimand",
    "EstimatorConfig",
    "GbmHyperparameters",
    "METHOD_IDS",
    "MethodRanking",
    "ObservedConfounderPoint",
    "ReweightMethod",
    "RunResult",
    "RoleKind",
    "SensitivityAnalysis",
    "SensitivityConfig",
    "SensitivityGrid",
    "Session",
    "SessionStore",
    "StaleJobError",
    "Step",
    "StepOrderError",
    "SyntheticData",
    "Tail",
    "TrimRule",
    "WeightSet",
    "apply_trim",
    "assign_roles",
    "balance_csv",
    "balance_table",
    "build_report",
    "clip_ps",
    "confounded_linear",
    "design_matrix",
    "doubly_robust_effect",
    "ess",
    "load_csv",
    "normalize_weights",
    "null_linear",
    "overlap_report",
    "ov_analysis",
    "observed_points",
    "ps_overlap_summary",
    "ps_to_weights",
    "recommend_method",
    "render_markdown",
    "run_all",
    "simulate_cell",
    "smd",
    "summarize",
    "weighted_ks",
    "weighted_mean",
    "weighted_means_effect",
    "weighted_sd",
    "weights_csv",
]
