"""Anchored population-adjusted indirect treatment comparisons.

Five strategies estimate the IPD-trial contrast in the aggregate trial's
population (MAIC, STC, maximum-likelihood and Bayesian G-computation, and
multiple imputation marginalization); :func:`compare` combines it with the
aggregate contrast through the common anchor arm.
"""

from .analysis import ComparisonResult, Roles, RunConfig, compare, infer_roles, run_analysis
from .cohort import CorrelationMatrix, Marginal, SyntheticCohort, moments_to_params, simulate_cohort
from .data import AldRecord, AldTable, IpdTable, ModelSpec, parse_ald, parse_ipd, serialize_ald
from .errors import (ConvergenceError, DiagnosticError, NoOverlapError, NumericalError, SeparationError,
                     SingularMatrixError, ValidationError)
from .gcomp import PosteriorDraws, RubinPooled, rubin_pool, sample_posterior
from .glm import FitResult, fit_glm
from .maic import MaicWeighter, effective_sample_size, estimate_weights
from .report import diagnose, emit_report
from .resampling import BootstrapPlan, bootstrap_variance
from .scales import EstimateWithVar, absolute_from_contrast, ald_contrast, get_scale
from .simulate import CovariateSpec, TrialDGP, simulate_trial_pair
from .strategies import MAIC, MIM, STC, GCompBayes, GCompML

__version__ = "0.1.0"

__all__ = [
    "AldRecord", "AldTable", "BootstrapPlan", "ComparisonResult", "ConvergenceError", "CorrelationMatrix",
    "CovariateSpec", "DiagnosticError", "EstimateWithVar", "FitResult", "GCompBayes", "GCompML", "IpdTable",
    "MAIC", "MIM", "MaicWeighter", "Marginal", "ModelSpec", "NoOverlapError", "NumericalError", "PosteriorDraws",
    "Roles", "RubinPooled", "RunConfig", "STC", "SeparationError", "SingularMatrixError", "SyntheticCohort",
    "TrialDGP", "ValidationError", "absolute_from_contrast", "ald_contrast", "bootstrap_variance", "compare",
    "diagnose", "effective_sample_size", "emit_report", "estimate_weights", "fit_glm", "get_scale",
    "infer_roles", "moments_to_params", "parse_ald", "parse_ipd", "rubin_pool", "run_analysis",
    "sample_posterior", "serialize_ald", "simulate_cohort", "simulate_trial_pair",
]
