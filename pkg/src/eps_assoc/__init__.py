"""Likelihood-based association analysis for extreme-phenotype designs.

Core objects: Dataset/ModelSpec describe the data and the mean model;
ExtremeDesign records who was sampled and at which phenotype cutoffs.
Inference comes in three flavors: a truncated-normal likelihood for
extreme-only samples, a logistic regression on tail membership, and a
mixture likelihood for cohorts where genotypes are observed only for a
subset. A Monte Carlo engine estimates power and estimator MSE across
sampling designs.
"""

from .data import (
    Dataset,
    ExtremeDesign,
    FitResult,
    ModelSpec,
    ParameterVector,
    RegressionView,
    TestResult,
    build_design,
    select_extremes,
    select_extremes_by_cutoffs,
)
from .epsbinary import dichotomize, fit_logistic, score_test_logistic
from .epsfull import (
    GenotypeDistribution,
    estimate_genotype_dist,
    fit_eps_full,
    loglik_eps_full,
    lrt_eps_full,
    score_test_eps_full,
)
from .epsonly import (
    fit_eps_only,
    log_tail_mass,
    loglik_eps_only,
    score_test_eps_only,
    tail_ratios,
)
from .linear import linear_score_test, ols_fit
from .sim import (
    DesignSpec,
    SimResult,
    SimScenario,
    apply_design,
    estimate_mse,
    estimate_power,
    model_spec_for,
    power_curve,
    simulate_dataset,
)
from .statskernel import (
    NonFiniteObjectiveError,
    OptimizerReport,
    chi2_sf,
    maximize,
    norm_cdf,
    norm_logcdf,
    norm_logpdf,
    norm_pdf,
    norm_quantile,
)

__all__ = [
    "Dataset",
    "ExtremeDesign",
    "FitResult",
    "ModelSpec",
    "ParameterVector",
    "RegressionView",
    "TestResult",
    "build_design",
    "select_extremes",
    "select_extremes_by_cutoffs",
    "dichotomize",
    "fit_logistic",
    "score_test_logistic",
    "GenotypeDistribution",
    "estimate_genotype_dist",
    "fit_eps_full",
    "loglik_eps_full",
    "lrt_eps_full",
    "score_test_eps_full",
    "fit_eps_only",
    "log_tail_mass",
    "loglik_eps_only",
    "score_test_eps_only",
    "tail_ratios",
    "linear_score_test",
    "ols_fit",
    "DesignSpec",
    "SimResult",
    "SimScenario",
    "apply_design",
    "estimate_mse",
    "estimate_power",
    "model_spec_for",
    "power_curve",
    "simulate_dataset",
    "NonFiniteObjectiveError",
    "OptimizerReport",
    "chi2_sf",
    "maximize",
    "norm_cdf",
    "norm_logcdf",
    "norm_logpdf",
    "norm_pdf",
    "norm_quantile",
]

__version__ = "0.1.0"
