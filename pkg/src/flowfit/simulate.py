"""Generative sampling and the two synthetic benchmark studies.

``generate_from_model`` draws cytograms from the mixture-of-regressions
model. The noisy-covariates study measures how prediction and variable
selection degrade when the fitted model only sees a noise-corrupted copy
of the driving covariate; the cluster-misspecification study measures the
cost of fitting the wrong number of clusters. Both emit flat row tables
ready for CSV output.
"""

import math
from dataclasses import dataclass

import numpy as np

from ._parallel import process_map
from .admm import AdmmConfig
from .binning import BinGrid, bin_particles
from .cv import CvGrid, select_lambdas
from .data import CovariateSeries, CytogramSeries
from .em import EMConfig
from .errors import DataError, FlowfitError
from .model import Hyperparams, ModelParams, log_mixture_weights, weighted_log_likelihood
from .multinomial import MultinomialConfig

__all__ = [
    "SyntheticTruth",
    "StudyConfig",
    "generate_from_model",
    "sunlight_series",
    "make_noisy_covariates_experiment",
    "run_noisy_covariates_study",
    "make_cluster_misspec_truth",
    "run_cluster_misspec_study",
]

# Calibrated mixture coefficient putting the second cluster at a quarter of
# the first cluster's share while the changepoint covariate is active, and
# at a vanishing share while it is not.
CHANGEPOINT_GAIN = 8.61


@dataclass(frozen=True)
class SyntheticTruth:
    """Generating model, its clean covariates, and per-time sample sizes."""

    params: ModelParams
    covariates: CovariateSeries
    sigma_add: float
    sample_sizes: np.ndarray

    def __post_init__(self):
        if self.sigma_add < 0:
            raise DataError("sigma_add must be nonnegative")
        sizes = np.asarray(self.sample_sizes, dtype=int)
        if sizes.shape != (self.covariates.num_times,):
            raise DataError("sample_sizes must have one entry per time point")
        object.__setattr__(self, "sample_sizes", sizes)


def generate_from_model(params: ModelParams, X: CovariateSeries, sample_sizes,
                        seed: int) -> CytogramSeries:
    """Draw a cytogram series: per time, categorical cluster labels then
    Gaussian coordinates. All multiplicities are 1."""
    sample_sizes = np.broadcast_to(np.asarray(sample_sizes, dtype=int), (X.num_times,))
    rng = np.random.default_rng(seed)
    pis = np.exp(log_mixture_weights(params, X.values))
    K = params.num_clusters
    d = params.dim
    chol = np.linalg.cholesky(params.sigma)
    means = params.beta0[None, :, :] + np.einsum(
        "tp,kpd->tkd", X.values, params.beta
    )
    coords = []
    for t in range(X.num_times):
        n = int(sample_sizes[t])
        labels = rng.choice(K, size=n, p=pis[t])
        noise = rng.standard_normal((n, d))
        coords.append(means[t, labels, :] + np.einsum("nde,ne->nd", chol[labels], noise))
    weights = tuple(np.ones(len(c)) for c in coords)
    return CytogramSeries(tuple(coords), weights)


def sunlight_series(T: int, period: int = 24) -> np.ndarray:
    """Deterministic diel driver: rectified sinusoid with the given period,
    lightly smoothed, standardized to mean 0 and sample sd 1."""
    t = np.arange(T, dtype=float)
    raw = np.maximum(np.sin(2.0 * np.pi * t / period), 0.0)
    kernel = np.array([0.25, 0.5, 0.25])
    padded = np.concatenate([raw[-1:], raw, raw[:1]])
    smooth = np.convolve(padded, kernel, mode="valid")
    return (smooth - smooth.mean()) / smooth.std(ddof=1)


def make_noisy_covariates_experiment(sigma_add: float, seed: int, T: int = 100):
    """Two-cluster experiment: sunlight-driven means, changepoint-driven
    mixture, spurious nuisance covariates.

    Returns ``(truth, observed_covariates, cytograms)``. The truth's clean
    covariates are [sunlight, inert, changepoint]; the observed series the
    fitted model sees is [sunlight + noise, changepoint, 8 spurious
    N(0, 1 + sigma_add^2) columns].
    """
    if sigma_add < 0:
        raise DataError("sigma_add must be nonnegative")
    rng = np.random.default_rng(seed)
    sun = sunlight_series(T)
    changepoint = (np.arange(T) >= T // 2).astype(float)
    inert = rng.standard_normal(T)
    clean = CovariateSeries(
        np.column_stack([sun, inert, changepoint]),
        ("sunlight", "inert", "changepoint"),
    )

    # Second cluster: vanishing share before the changepoint, a quarter of
    # cluster 1 after it.
    alpha0 = np.array([0.0, math.log(0.25) - CHANGEPOINT_GAIN])
    alpha = np.array([
        [0.0, 0.0, 0.0],
        [0.0, 0.0, CHANGEPOINT_GAIN],
    ])
    beta0 = np.array([[0.0], [3.0]])
    beta = np.array([
        [[0.3], [0.0], [0.0]],
        [[-0.3], [0.0], [0.0]],
    ])
    sigma = np.ones((2, 1, 1))
    params = ModelParams(alpha0, alpha, beta0, beta, sigma)

    sizes = np.where(np.arange(T) < T // 2, 200, 250)
    truth = SyntheticTruth(params, clean, sigma_add, sizes)

    cytograms = generate_from_model(params, clean, sizes, int(rng.integers(2**31)))

    noisy_sun = sun + rng.normal(0.0, sigma_add, T)
    spurious = rng.normal(0.0, math.sqrt(1.0 + sigma_add**2), (T, 8))
    observed = CovariateSeries(
        np.column_stack([noisy_sun, changepoint, spurious]),
        ("sunlight", "changepoint") + tuple(f"spur{i}" for i in range(1, 9)),
    )
    return truth, observed, cytograms


# ---------------------------------------------------------------------------
# Study configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StudyConfig:
    """Desk-scale study knobs; ``quick`` shrinks grids and restarts."""

    seed: int = 0
    quick: bool = False
    radius: float = 1.0
    nfolds: int = 5
    grid_size: int | None = None
    grid_low: float | None = None
    grid_high: float | None = None
    cv_restarts: int | None = None
    refit_restarts: int | None = None
    max_iter: int | None = None
    rel_tol: float | None = None
    bin_per_axis: int = 64
    test_factor: int = 10
    workers: int | None = None

    def _pick(self, value, quick_default, full_default):
        if value is not None:
            return value
        return quick_default if self.quick else full_default

    def resolved_grid(self) -> CvGrid:
        # quick mode compresses the grid onto the informative penalty range
        size = self._pick(self.grid_size, 5, 10)
        low = self._pick(self.grid_low, 1e-3, 1e-4)
        high = self._pick(self.grid_high, 1e-1, 1.0)
        return CvGrid.default(size, low, high)

    def em_config(self, seed: int, restarts: int, role: str = "cv") -> EMConfig:
        if role == "cv":
            max_iter = self._pick(self.max_iter, 30, 80)
            rel_tol = self._pick(self.rel_tol, 1e-4, 1e-5)
        else:
            max_iter = 120 if self.quick else 200
            rel_tol = 1e-6
        # capped inner budgets: the EM safeguard absorbs inexact M-steps
        return EMConfig(
            max_iter=max_iter,
            rel_tol=rel_tol,
            restarts=restarts,
            seed=seed,
            admm=AdmmConfig(max_iter=60, eps_abs=1e-5),
            alpha_solver=MultinomialConfig(max_iter=150, tol=1e-7),
            workers=1,
        )

    def restart_counts(self):
        cv = self._pick(self.cv_restarts, 1, 2)
        refit = self._pick(self.refit_restarts, 2, 5)
        return cv, refit


def _maybe_bin(Y: CytogramSeries, per_axis: int) -> CytogramSeries:
    if per_axis and per_axis > 0:
        grid = BinGrid.from_data(Y, per_axis)
        return bin_particles(Y, grid, mode="weights").to_cytograms()
    return Y


def _cross_validated_fit(X, Y, K, cfg: StudyConfig, fit_seed: int):
    cv_restarts, refit_restarts = cfg.restart_counts()
    em_cfg = cfg.em_config(fit_seed, cv_restarts, role="cv")
    refit_cfg = cfg.em_config(fit_seed, refit_restarts, role="refit")
    return select_lambdas(
        cfg.resolved_grid(), X, Y, K, cfg.radius, em_cfg,
        nfolds=cfg.nfolds, refit_config=refit_cfg,
    )


def _rep_seeds(*key) -> list:
    return [int(s) for s in np.random.SeedSequence(tuple(key)).generate_state(4)]


def _mean_probabilities(params: ModelParams, X: CovariateSeries) -> np.ndarray:
    return np.exp(log_mixture_weights(params, X.values)).mean(axis=0)


# ---------------------------------------------------------------------------
# Noisy-covariates study
# ---------------------------------------------------------------------------

def _noisy_rep(args):
    sigma, sig_idx, rep, cfg = args
    data_seed, test_seed, fit_seed, _ = _rep_seeds(cfg.seed, 101, sig_idx, rep)
    row = {"sigma_add": sigma, "rep": rep, "ok": True, "error": ""}
    try:
        truth, observed, train = make_noisy_covariates_experiment(sigma, data_seed)
        fit_data = _maybe_bin(train, cfg.bin_per_axis)
        cvres = _cross_validated_fit(observed, fit_data, 2, cfg, fit_seed)
        params = cvres.refit.params

        test = generate_from_model(
            truth.params, truth.covariates,
            cfg.test_factor * truth.sample_sizes, test_seed,
        )
        nll = -weighted_log_likelihood(params, observed, test) / test.total_weight

        mean_pi = _mean_probabilities(params, observed)
        k_major = int(np.argmax(mean_pi))  # the always-present cluster
        k_minor = 1 - k_major
        spur = slice(2, 10)
        row.update(
            test_nll=float(nll),
            lambda_alpha=cvres.best_lambdas[0],
            lambda_beta=cvres.best_lambdas[1],
            sunlight_selected_major=bool(params.beta[k_major, 0, 0] != 0.0),
            sunlight_selected_minor=bool(params.beta[k_minor, 0, 0] != 0.0),
            spurious_rate_major=float(np.mean(params.beta[k_major, spur, 0] != 0.0)),
            spurious_rate_minor=float(np.mean(params.beta[k_minor, spur, 0] != 0.0)),
        )
    except FlowfitError as exc:
        row.update(ok=False, error=str(exc))
    return row


def run_noisy_covariates_study(sigma_adds, reps: int,
                               config: StudyConfig = StudyConfig()):
    """Run the noisy-covariates benchmark.

    Returns ``(per_rep_rows, summary_rows)``; the summary has one row per
    noise level with mean held-out NLL and selection rates, failed reps
    excluded and counted.
    """
    if reps < 1:
        raise DataError("reps must be at least 1")
    tasks = [
        (float(sigma), si, rep, config)
        for si, sigma in enumerate(sigma_adds)
        for rep in range(reps)
    ]
    rows = process_map(_noisy_rep, tasks, workers=config.workers)
    summary = []
    for si, sigma in enumerate(sigma_adds):
        group = [r for r in rows if r["sigma_add"] == float(sigma)]
        ok = [r for r in group if r["ok"]]
        entry = {
            "sigma_add": float(sigma),
            "reps": len(group),
            "failures": len(group) - len(ok),
        }
        if ok:
            entry.update(
                mean_test_nll=float(np.mean([r["test_nll"] for r in ok])),
                se_test_nll=_standard_error([r["test_nll"] for r in ok]),
                sunlight_rate_major=float(np.mean([r["sunlight_selected_major"] for r in ok])),
                sunlight_rate_minor=float(np.mean([r["sunlight_selected_minor"] for r in ok])),
                spurious_rate_major=float(np.mean([r["spurious_rate_major"] for r in ok])),
                spurious_rate_minor=float(np.mean([r["spurious_rate_minor"] for r in ok])),
            )
        summary.append(entry)
    return rows, summary


# ---------------------------------------------------------------------------
# Cluster-misspecification study
# ---------------------------------------------------------------------------

def make_cluster_misspec_truth(seed: int = 7, T: int = 60) -> SyntheticTruth:
    """Three-cluster ground truth: two tight sunlight-driven populations
    and one broad low-probability background cluster."""
    rng = np.random.default_rng(seed)
    sun = sunlight_series(T)
    inert = rng.standard_normal(T)
    X = CovariateSeries(np.column_stack([sun, inert]), ("sunlight", "inert"))
    params = ModelParams(
        alpha0=np.array([0.8, 0.8, -0.6]),
        alpha=np.array([[0.5, 0.0], [0.0, 0.0], [0.0, 0.0]]),
        beta0=np.array([[-2.5], [2.5], [0.0]]),
        beta=np.array([[[0.25], [0.0]], [[-0.25], [0.0]], [[0.0], [0.0]]]),
        sigma=np.array([[[0.25]], [[0.25]], [[4.0]]]),
    )
    sizes = np.full(T, 150)
    return SyntheticTruth(params, X, 0.0, sizes)


def _misspec_rep(args):
    truth, K, rep, cfg = args
    data_seed, test_seed, fit_seed, _ = _rep_seeds(cfg.seed, 202, rep)
    fit_seed = fit_seed + K  # same data across K, distinct fits
    row = {"K": K, "rep": rep, "ok": True, "error": ""}
    try:
        train = generate_from_model(truth.params, truth.covariates,
                                    truth.sample_sizes, data_seed)
        fit_data = _maybe_bin(train, cfg.bin_per_axis)
        cvres = _cross_validated_fit(truth.covariates, fit_data, K, cfg, fit_seed)
        params = cvres.refit.params

        test = generate_from_model(
            truth.params, truth.covariates,
            cfg.test_factor * truth.sample_sizes, test_seed,
        )
        scale = test.total_weight
        nll = -weighted_log_likelihood(params, truth.covariates, test) / scale
        truth_nll = -weighted_log_likelihood(truth.params, truth.covariates, test) / scale

        mean_pi = _mean_probabilities(params, truth.covariates)
        near_zero = int(np.sum(mean_pi < 0.01 / K))
        row.update(
            test_nll=float(nll),
            truth_nll=float(truth_nll),
            near_zero_clusters=near_zero,
            lambda_alpha=cvres.best_lambdas[0],
            lambda_beta=cvres.best_lambdas[1],
        )
    except FlowfitError as exc:
        row.update(ok=False, error=str(exc))
    return row


def run_cluster_misspec_study(K_values, reps: int,
                              config: StudyConfig = StudyConfig(),
                              truth: SyntheticTruth | None = None):
    """Fit K-cluster models to data from a fixed K_true=3 ground truth.

    The same ``reps`` datasets are reused for every K (paired design).
    Returns ``(per_rep_rows, summary_rows)``.
    """
    if not K_values:
        raise DataError("K_values must be nonempty")
    if reps < 1:
        raise DataError("reps must be at least 1")
    if truth is None:
        truth = make_cluster_misspec_truth()
    tasks = [
        (truth, int(K), rep, config)
        for K in K_values
        for rep in range(reps)
    ]
    rows = process_map(_misspec_rep, tasks, workers=config.workers)
    summary = []
    for K in K_values:
        group = [r for r in rows if r["K"] == int(K)]
        ok = [r for r in group if r["ok"]]
        entry = {"K": int(K), "reps": len(group), "failures": len(group) - len(ok)}
        if ok:
            entry.update(
                mean_test_nll=float(np.mean([r["test_nll"] for r in ok])),
                se_test_nll=_standard_error([r["test_nll"] for r in ok]),
                mean_truth_nll=float(np.mean([r["truth_nll"] for r in ok])),
                mean_near_zero=float(np.mean([r["near_zero_clusters"] for r in ok])),
            )
        summary.append(entry)
    return rows, summary


def _standard_error(values) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / np.sqrt(values.size))
