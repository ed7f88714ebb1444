"""Sparse mixture-of-regressions fitting for cytogram time series.

Fits K Gaussian clusters whose probabilities and means are driven by
time-varying covariates, with lasso penalties on all slope coefficients
and a hard per-time ball constraint on mean deviations, estimated by a
penalized EM algorithm (custom ADMM for the constrained mean update).
"""

from .admm import AdmmConfig, AdmmState, project_ball, soft_threshold, solve_beta
from .binning import (
    BinGrid,
    BinnedCytogramSeries,
    bin_particles,
    biomass_multiplicity,
    verify_binning_bound,
)
from .cv import CvGrid, CvResult, cv_score, make_folds, select_lambdas
from .data import CovariateSeries, CytogramSeries
from .em import (
    EMConfig,
    FitResult,
    Responsibilities,
    e_step,
    fit_em,
    init_params,
    m_step_alpha,
    m_step_sigma,
    q_function,
)
from .errors import DataError, FlowfitError, NumericalError
from .model import (
    Hyperparams,
    ModelParams,
    cluster_means,
    gaussian_log_density,
    mixture_weights,
    penalized_objective,
    weighted_log_likelihood,
)
from .simulate import (
    StudyConfig,
    SyntheticTruth,
    generate_from_model,
    make_cluster_misspec_truth,
    make_noisy_covariates_experiment,
    run_cluster_misspec_study,
    run_noisy_covariates_study,
)

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig", "AdmmState", "project_ball", "soft_threshold", "solve_beta",
    "BinGrid", "BinnedCytogramSeries", "bin_particles", "biomass_multiplicity",
    "verify_binning_bound",
    "CvGrid", "CvResult", "cv_score", "make_folds", "select_lambdas",
    "CovariateSeries", "CytogramSeries",
    "EMConfig", "FitResult", "Responsibilities", "e_step", "fit_em",
    "init_params", "m_step_alpha", "m_step_sigma", "q_function",
    "DataError", "FlowfitError", "NumericalError",
    "Hyperparams", "ModelParams", "cluster_means", "gaussian_log_density",
    "mixture_weights", "penalized_objective", "weighted_log_likelihood",
    "StudyConfig", "SyntheticTruth", "generate_from_model",
    "make_cluster_misspec_truth", "make_noisy_covariates_experiment",
    "run_cluster_misspec_study", "run_noisy_covariates_study",
]
