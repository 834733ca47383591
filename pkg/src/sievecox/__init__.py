"""Marginal proportional-hazards treatment effects under dependent censoring.

The estimator condenses high-dimensional covariates through a fitted
dropout model, rescales the resulting index onto the unit interval per
treatment level, and maximizes a penalized pseudo-likelihood over B-spline
representations of the baseline hazard and the index densities.  Standard
errors come from numerical profile-likelihood differences combined with
the dropout fit's influence values.
"""

from .bspline import SplineBasis, make_basis
from .cox import CoxFit, influence, naive_alpha
from .data import Dataset, Observation, SimScenario, censoring_rate, generate, \
    load_csv, load_scenario, write_csv
from .estimator import (
    FitConfig,
    FitResult,
    SieveCoxEstimator,
    VarianceEstimate,
    fit_pipeline,
    maximize,
    omega_hat,
    profile_alpha,
    profile_psi,
    score_contrib,
    sigma_hat,
    variance,
)
from .likelihood import PenalizedObjective, loglik_obs, objective_value, gradient
from .quadrature import QuadratureRule
from .sieve import (
    SieveParams,
    SupportBounds,
    cum_hazard,
    estimate_support,
    f_density,
    g_density,
    lambda_at,
    u_transform,
)
from .study import ScenarioSpec, StudyConfig, StudyReport, emit, fit_once, run_study

__version__ = "0.1.0"

__all__ = [
    "SplineBasis", "make_basis",
    "CoxFit", "influence", "naive_alpha",
    "Dataset", "Observation", "SimScenario", "censoring_rate", "generate",
    "load_csv", "load_scenario", "write_csv",
    "FitConfig", "FitResult", "SieveCoxEstimator", "VarianceEstimate",
    "fit_pipeline", "maximize", "omega_hat", "profile_alpha", "profile_psi",
    "score_contrib", "sigma_hat", "variance",
    "PenalizedObjective", "loglik_obs", "objective_value", "gradient",
    "QuadratureRule",
    "SieveParams", "SupportBounds", "cum_hazard", "estimate_support",
    "f_density", "g_density", "lambda_at", "u_transform",
    "ScenarioSpec", "StudyConfig", "StudyReport", "emit", "fit_once", "run_study",
    "__version__",
]
