"""Least sum-of-minimums identification of switched linear-in-parameter systems."""

from .analysis import (
    bound_report,
    comparability,
    corollary1_bound,
    estimate_D,
    g_of_lambda,
    lemma5_sufficient,
    lemma7_check,
    proposition1_check,
    theorem1_check,
    theorem2_bound,
)
from .assign import AssignmentResult, canonical_assignment, cost, delta_r, lemma1_gap
from .estimator import (
    EstimateResult,
    EstimatorConfig,
    lad_regression,
    lsm_alternating,
    lsm_bruteforce,
    matched_error,
)
from .metrics import (
    MetricsReport,
    compute_metrics,
    d_hat,
    gamma_m,
    genericity_index,
    lambda_l1,
    r_star,
    xi_single_mode_curve,
    xi_single_mode_exact,
    xi_single_mode_upper,
    xi_switched_lower,
)
from .model import (
    BudgetExceededError,
    Dataset,
    FeatureMapSpec,
    GroundTruth,
    NoiseSpec,
    build_regressors,
    simulate,
    switching_generator,
)

__version__ = "0.1.0"
