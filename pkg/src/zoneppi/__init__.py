"""Prediction-powered estimation of zone-level mean crop yields.

Combines a small labeled sample of ground-truth yields with a larger
unlabeled sample carrying model predictions, via a power-tuned correction
term whose coefficient is estimated to minimize asymptotic variance.
Includes pooled LASSO control functions, BCa bootstrap confidence intervals,
a synthetic data generator, and a bootstrap evaluation harness.
"""

from .ci import (
    CiMethod,
    ConfidenceInterval,
    bca_interval,
    bootstrap_estimates,
    bootstrap_t_interval,
    clt_interval,
    jackknife_estimates,
    percentile_interval,
)
from .data import (
    FieldRecord,
    ZoneDataset,
    assign_study_regions,
    filter_eligible_zones,
    load_dataset,
    write_dataset,
)
from .estimators import (
    EstimateResult,
    EstimatorKind,
    lambda_hat,
    plugin_se,
    ppi_estimate,
    r_squared_within,
    theoretical_re,
)
from .evaluation import (
    EvalConfig,
    EvaluationReport,
    effective_sample_sizes,
    make_replicate,
    re_uncertainty_band,
    run_evaluation,
)
from .features import FeatureRow, basis_labels, basis_length, expand_basis, expand_matrix
from .lasso import ControlFunction, LassoFit, cv_select, fit_lasso_path, soft_threshold
from .pipeline import (
    PipelineConfig,
    ZoneReport,
    assign_folds,
    cross_fit_predictions,
    learn_control_functions,
    run_pipeline,
)
from .synth import SynthConfig, generate

__version__ = "0.1.0"

__all__ = [
    "CiMethod",
    "ConfidenceInterval",
    "ControlFunction",
    "EstimateResult",
    "EstimatorKind",
    "EvalConfig",
    "EvaluationReport",
    "FeatureRow",
    "FieldRecord",
    "LassoFit",
    "PipelineConfig",
    "SynthConfig",
    "ZoneDataset",
    "ZoneReport",
    "assign_folds",
    "assign_study_regions",
    "basis_labels",
    "basis_length",
    "bca_interval",
    "bootstrap_estimates",
    "bootstrap_t_interval",
    "clt_interval",
    "cross_fit_predictions",
    "cv_select",
    "effective_sample_sizes",
    "expand_basis",
    "expand_matrix",
    "filter_eligible_zones",
    "fit_lasso_path",
    "generate",
    "jackknife_estimates",
    "lambda_hat",
    "learn_control_functions",
    "load_dataset",
    "make_replicate",
    "percentile_interval",
    "plugin_se",
    "ppi_estimate",
    "r_squared_within",
    "re_uncertainty_band",
    "run_evaluation",
    "run_pipeline",
    "soft_threshold",
    "theoretical_re",
    "write_dataset",
]
