"""Model parameters, mixture weights, cluster means, and likelihoods.

The model: at time t with covariates x, a particle belongs to cluster k
with probability softmax_k(alpha0_k + alpha_k . x) and, given k, is drawn
from N(beta0_k + beta_k^T x, Sigma_k). Multiplicities enter the
log-likelihood as per-particle weights, and the fitting objective is the
multiplicity-averaged negative log-likelihood plus L1 penalties on the
slope coefficients (never the intercepts), subject to a per-time ball
constraint ||beta_k^T x_t||_2 <= r limiting how far each cluster mean may
wander from its intercept.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import logsumexp

from .data import CovariateSeries, CytogramSeries
from .errors import DataError, NumericalError

__all__ = [
    "ModelParams",
    "Hyperparams",
    "mixture_weights",
    "cluster_means",
    "gaussian_log_density",
    "weighted_log_likelihood",
    "penalized_objective",
    "sigma_floor_value",
    "floor_spd",
]

# Feasibility slack, relative to the radius, when classifying a parameter
# set as satisfying the ball constraint.
CONSTRAINT_TOL = 1e-6

# Eigenvalue floor for Sigma_k, as a fraction of the squared data range.
SIGMA_FLOOR_FRACTION = 1e-6

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ModelParams:
    """Full parameter set for a K-cluster model.

    alpha0 : (K,)       mixture intercepts
    alpha  : (K, p)     mixture slopes
    beta0  : (K, d)     mean intercepts
    beta   : (K, p, d)  mean slopes
    sigma  : (K, d, d)  per-cluster covariances (symmetric positive definite)
    """

    alpha0: np.ndarray
    alpha: np.ndarray
    beta0: np.ndarray
    beta: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        for name in ("alpha0", "alpha", "beta0", "beta", "sigma"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
        K, p = self.alpha.shape
        d = self.beta0.shape[1] if self.beta0.ndim == 2 else 1
        if self.alpha0.shape != (K,):
            raise DataError("alpha0 must have shape (K,)")
        if self.beta0.shape != (K, d) or self.beta.shape != (K, p, d):
            raise DataError("beta0/beta shapes inconsistent with (K, p, d)")
        if self.sigma.shape != (K, d, d):
            raise DataError("sigma must have shape (K, d, d)")

    @property
    def num_clusters(self) -> int:
        return self.alpha0.shape[0]

    @property
    def num_covariates(self) -> int:
        return self.alpha.shape[1]

    @property
    def dim(self) -> int:
        return self.beta0.shape[1]

    def validate(self, sigma_floor: float | None = None) -> None:
        """Check finiteness, symmetry and positive definiteness."""
        for name in ("alpha0", "alpha", "beta0", "beta", "sigma"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DataError(f"{name} contains non-finite entries")
        for k in range(self.num_clusters):
            S = self.sigma[k]
            if not np.allclose(S, S.T, atol=1e-8):
                raise NumericalError(f"covariance of cluster {k + 1} is not symmetric")
            eigvals = np.linalg.eigvalsh(S)
            if eigvals[0] <= 0:
                raise NumericalError(
                    f"covariance of cluster {k + 1} is not positive definite"
                )
            if sigma_floor is not None and eigvals[0] < sigma_floor * (1 - 1e-9):
                raise NumericalError(
                    f"covariance of cluster {k + 1} falls below the eigenvalue floor"
                )

    def replace(self, **kwargs) -> "ModelParams":
        fields = {n: getattr(self, n) for n in ("alpha0", "alpha", "beta0", "beta", "sigma")}
        fields.update(kwargs)
        return ModelParams(**fields)


@dataclass(frozen=True)
class Hyperparams:
    """Penalty strengths and ball-constraint radius."""

    lambda_alpha: float
    lambda_beta: float
    radius: float

    def __post_init__(self):
        if self.lambda_alpha < 0 or self.lambda_beta < 0:
            raise DataError("penalty strengths must be nonnegative")
        if not self.radius > 0:
            raise DataError("radius must be positive")


# ---------------------------------------------------------------------------
# Mixture weights and cluster means
# ---------------------------------------------------------------------------

def log_mixture_weights(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Log mixture probabilities, (T, K), via max-shifted log-sum-exp."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    logits = params.alpha0[None, :] + X @ params.alpha.T
    return logits - logsumexp(logits, axis=1, keepdims=True)


def mixture_weights(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Cluster probabilities at one covariate vector; sums to 1."""
    return np.exp(log_mixture_weights(params, np.asarray(x)[None, :])[0])


def cluster_means_series(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Cluster means for every time point, (T, K, d)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return params.beta0[None, :, :] + np.einsum("tp,kpd->tkd", X, params.beta)


def cluster_means(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """K x d matrix of cluster means at one covariate vector."""
    return cluster_means_series(params, np.asarray(x)[None, :])[0]


def mean_deviations(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """||beta_k^T x_t||_2 for every (t, k); the ball-constrained quantity."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    dev = np.einsum("tp,kpd->tkd", X, params.beta)
    return np.linalg.norm(dev, axis=2)


def is_feasible(params: ModelParams, X: np.ndarray, radius: float,
                rel_tol: float = CONSTRAINT_TOL) -> bool:
    return bool(np.max(mean_deviations(params, X)) <= radius * (1.0 + rel_tol))


# ---------------------------------------------------------------------------
# Gaussian densities
# ---------------------------------------------------------------------------

def cholesky_factors(sigma: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor per cluster; names the offender on failure."""
    K, d, _ = sigma.shape
    chols = np.empty_like(sigma)
    for k in range(K):
        try:
            chols[k] = cholesky(sigma[k], lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"covariance of cluster {k + 1} is not positive definite"
            ) from exc
    return chols


def gaussian_log_density(y: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> float:
    """log N_d(y; mu, sigma), computed through the Cholesky factor."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = y.shape[0]
    try:
        L = cholesky(sigma, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("covariance is not positive definite") from exc
    z = solve_triangular(L, y - mu, lower=True)
    return float(-0.5 * d * LOG_2PI - np.sum(np.log(np.diag(L))) - 0.5 * z @ z)


def component_log_densities(Y: CytogramSeries, means: np.ndarray,
                            chols: np.ndarray) -> np.ndarray:
    """Per-particle, per-cluster Gaussian log-densities.

    ``means`` is (T, K, d) and ``chols`` the (K, d, d) Cholesky factors.
    Returns an (n_total, K) array aligned with ``Y.flat``. One triangular
    solve per cluster over the whole flattened series keeps this cheap.
    """
    yall, _, tidx = Y.flat
    n, d = yall.shape
    K = chols.shape[0]
    out = np.empty((n, K))
    for k in range(K):
        L = chols[k]
        diff = yall - means[tidx, k, :]
        z = solve_triangular(L, diff.T, lower=True, check_finite=False)
        logdet = np.sum(np.log(np.diag(L)))
        out[:, k] = -0.5 * d * LOG_2PI - logdet - 0.5 * np.einsum("ij,ij->j", z, z)
    return out


def particle_log_mixture(params: ModelParams, X: CovariateSeries,
                         Y: CytogramSeries):
    """Per-particle mixture log-density and the component log-joint matrix.

    Returns ``(log_mix, log_joint)`` where ``log_joint[i, k] =
    log pi_k(t_i) + log phi_k(y_i)`` and ``log_mix`` is its log-sum-exp
    over clusters. All downstream quantities (likelihood, responsibilities)
    derive from these two arrays.
    """
    logpi = log_mixture_weights(params, X.values)
    means = cluster_means_series(params, X.values)
    chols = cholesky_factors(params.sigma)
    logphi = component_log_densities(Y, means, chols)
    _, _, tidx = Y.flat
    log_joint = logpi[tidx] + logphi
    log_mix = logsumexp(log_joint, axis=1)
    return log_mix, log_joint


def weighted_log_likelihood(params: ModelParams, X: CovariateSeries,
                            Y: CytogramSeries) -> float:
    """Multiplicity-weighted mixture log-likelihood of the whole series."""
    Y.check_matches(X)
    log_mix, _ = particle_log_mixture(params, X, Y)
    _, wall, _ = Y.flat
    # np.sum keeps small reductions in input order, so duplicating a
    # particle with multiplicity 2 matches listing it twice exactly
    return float(np.sum(wall * log_mix))


def penalty_term(params: ModelParams, hyper: Hyperparams) -> float:
    """L1 penalties on the slope blocks; intercepts are never penalized."""
    return float(
        hyper.lambda_alpha * np.abs(params.alpha).sum()
        + hyper.lambda_beta * np.abs(params.beta).sum()
    )


def penalized_objective(params: ModelParams, X: CovariateSeries,
                        Y: CytogramSeries, hyper: Hyperparams) -> float:
    """Scaled negative log-likelihood plus penalties; +inf when infeasible."""
    if not is_feasible(params, X.values, hyper.radius):
        return float("inf")
    nll = -weighted_log_likelihood(params, X, Y) / Y.total_weight
    return nll + penalty_term(params, hyper)


# ---------------------------------------------------------------------------
# Covariance flooring
# ---------------------------------------------------------------------------

def sigma_floor_value(Y: CytogramSeries) -> float:
    """Eigenvalue floor for this dataset: a tiny fraction of the squared
    data range (largest axis), keeping every Sigma_k safely away from
    singularity."""
    rng = float(np.max(Y.axis_range))
    if rng <= 0:
        rng = 1.0
    return SIGMA_FLOOR_FRACTION * rng * rng


def floor_spd(S: np.ndarray, floor: float) -> np.ndarray:
    """Symmetrize and clamp eigenvalues of one covariance at ``floor``.

    Eigen-clamping is the exact maximizer of the Gaussian M-step under the
    constraint lambda_min(Sigma) >= floor, so applying it never breaks the
    EM descent property.
    """
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    if vals[0] >= floor:
        return S
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T
