"""Penalized EM driver: responsibilities, M-steps, restarts, convergence.

Each iteration re-estimates responsibilities, then block-updates the
mixture coefficients (in-repo multinomial lasso), the mean coefficients
(one ADMM solve per cluster, see :mod:`flowfit.admm`), and the covariances
(closed form with an eigenvalue floor). Every block update is guarded so
it never increases the penalized surrogate, which makes the recorded
objective trace non-increasing up to floating-point noise even though the
inner solvers are iterative.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from ._parallel import thread_map
from .admm import AdmmConfig, solve_beta
from .data import CovariateSeries, CytogramSeries
from .errors import DataError, NumericalError
from .model import (
    Hyperparams,
    ModelParams,
    cluster_means_series,
    cholesky_factors,
    particle_log_mixture,
    penalty_term,
    sigma_floor_value,
    floor_spd,
)
from .multinomial import MultinomialConfig, fit_multinomial_lasso

__all__ = [
    "EMConfig",
    "FitResult",
    "Responsibilities",
    "e_step",
    "m_step_alpha",
    "m_step_sigma",
    "q_function",
    "init_params",
    "fit_em",
]

log = logging.getLogger(__name__)

# Clusters whose responsibility mass falls under this fraction of the total
# multiplicity keep their previous beta/sigma for the iteration.
EMPTY_CLUSTER_FRACTION = 1e-12


@dataclass(frozen=True)
class EMConfig:
    max_iter: int = 200
    rel_tol: float = 1e-6
    restarts: int = 5
    seed: int = 0
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    alpha_solver: MultinomialConfig = field(default_factory=MultinomialConfig)
    workers: int | None = 1

    def __post_init__(self):
        if self.max_iter < 1 or self.restarts < 1:
            raise DataError("max_iter and restarts must be at least 1")
        if not self.rel_tol > 0:
            raise DataError("rel_tol must be positive")


@dataclass(frozen=True)
class Responsibilities:
    """Per-particle cluster membership probabilities, aligned with Y.flat."""

    gamma: np.ndarray  # (n_total, K)

    def validate(self) -> None:
        sums = self.gamma.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-10):
            raise NumericalError("responsibilities do not normalize to 1")


@dataclass
class FitResult:
    params: ModelParams
    objective_trace: np.ndarray
    final_objective: float
    responsibilities: Responsibilities
    winner_restart: int
    restart_objectives: list
    converged: bool
    empty_cluster_events: int = 0

    def to_dict(self, include_responsibilities: bool = True) -> dict:
        doc = {
            "alpha0": self.params.alpha0.tolist(),
            "alpha": self.params.alpha.tolist(),
            "beta0": self.params.beta0.tolist(),
            "beta": self.params.beta.tolist(),
            "sigma": self.params.sigma.tolist(),
            "objective_trace": list(map(float, self.objective_trace)),
            "final_objective": float(self.final_objective),
            "winner_restart": self.winner_restart,
            "restart_objectives": [
                None if not np.isfinite(v) else float(v) for v in self.restart_objectives
            ],
            "converged": self.converged,
            "empty_cluster_events": self.empty_cluster_events,
        }
        if include_responsibilities:
            doc["responsibilities"] = self.responsibilities.gamma.tolist()
        return doc


# ---------------------------------------------------------------------------
# Individual steps
# ---------------------------------------------------------------------------

def e_step(params: ModelParams, X: CovariateSeries, Y: CytogramSeries) -> Responsibilities:
    """Posterior membership probabilities, computed in log space."""
    for name in ("alpha0", "alpha", "beta0", "beta", "sigma"):
        if not np.all(np.isfinite(getattr(params, name))):
            raise DataError(f"e_step given non-finite {name}")
    log_mix, log_joint = particle_log_mixture(params, X, Y)
    return Responsibilities(np.exp(log_joint - log_mix[:, None]))


def _per_time_masses(resp: Responsibilities, Y: CytogramSeries) -> np.ndarray:
    """gamma[t, k]: multiplicity-weighted responsibility mass per time."""
    _, wall, tidx = Y.flat
    T = Y.num_times
    K = resp.gamma.shape[1]
    wgamma = wall[:, None] * resp.gamma
    return np.stack(
        [np.bincount(tidx, weights=wgamma[:, k], minlength=T) for k in range(K)],
        axis=1,
    )


def m_step_alpha(resp: Responsibilities, X: CovariateSeries, Y: CytogramSeries,
                 lambda_alpha: float,
                 config: MultinomialConfig = MultinomialConfig(),
                 warm_coef: np.ndarray | None = None):
    """Mixture-coefficient update; returns (alpha0, alpha, coef).

    The last cluster is the softmax reference: its coefficients stay 0.
    """
    gamma_tk = _per_time_masses(resp, Y)
    coef, _ = fit_multinomial_lasso(
        X.values, gamma_tk, lambda_alpha, Y.total_weight,
        coef0=warm_coef, config=config,
    )
    p = X.num_covariates
    alpha0 = np.concatenate([coef[0], [0.0]])
    alpha = np.vstack([coef[1:].T, np.zeros((1, p))])
    return alpha0, alpha, coef


def m_step_sigma(resp: Responsibilities, X: CovariateSeries, Y: CytogramSeries,
                 beta0: np.ndarray, beta: np.ndarray, floor: float,
                 previous: np.ndarray | None = None):
    """Weighted residual second moments, eigenvalue-floored.

    Empty clusters keep their previous covariance; returns
    (sigma, empty_cluster_indices).
    """
    yall, wall, tidx = Y.flat
    K, d = beta0.shape
    params_means = beta0[None, :, :] + np.einsum("tp,kpd->tkd", X.values, beta)
    sigma = np.empty((K, d, d))
    empties = []
    total = Y.total_weight
    for k in range(K):
        wgamma = wall * resp.gamma[:, k]
        denom = wgamma.sum()
        if denom < EMPTY_CLUSTER_FRACTION * total:
            if previous is None:
                raise NumericalError(f"cluster {k + 1} has no responsibility mass")
            sigma[k] = previous[k]
            empties.append(k)
            log.warning("cluster %d empty during covariance update", k + 1)
            continue
        resid = yall - params_means[tidx, k, :]
        second = (resid * wgamma[:, None]).T @ resid / denom
        sigma[k] = floor_spd(second, floor)
    return sigma, empties


def q_function(params: ModelParams, resp: Responsibilities, X: CovariateSeries,
               Y: CytogramSeries, hyper: Hyperparams) -> float:
    """Penalized EM surrogate at ``params`` under fixed responsibilities.

    Sign convention: this is the minimized quantity, i.e. the negative
    expected complete-data log-likelihood (scaled by 1/N) plus penalties,
    +inf when the ball constraint is violated.
    """
    from .model import is_feasible

    if not is_feasible(params, X.values, hyper.radius):
        return float("inf")
    _, wall, _ = Y.flat
    _, log_joint = particle_log_mixture(params, X, Y)
    g = resp.gamma
    contrib = np.where(g > 0, g * log_joint, 0.0)
    expected = float((wall[:, None] * contrib).sum())
    return -expected / Y.total_weight + penalty_term(params, hyper)


def init_params(X: CovariateSeries, Y: CytogramSeries, K: int, seed: int) -> ModelParams:
    """Random initialization: K distinct particles as starting intercepts
    (multiplicity-weighted, without replacement), zero slopes, uniform
    mixture, and diagonal covariances of (axis range / K)."""
    yall, wall, _ = Y.flat
    uniq, inverse = np.unique(yall, axis=0, return_inverse=True)
    if uniq.shape[0] < K:
        raise DataError(f"need at least {K} distinct particles, found {uniq.shape[0]}")
    agg = np.bincount(inverse, weights=wall)
    rng = np.random.default_rng(seed)
    picks = rng.choice(uniq.shape[0], size=K, replace=False, p=agg / agg.sum())
    beta0 = uniq[picks]
    p = X.num_covariates
    d = Y.dim
    rng_axis = Y.axis_range.copy()
    rng_axis[rng_axis == 0] = 1.0
    sigma = np.tile(np.diag(rng_axis / K), (K, 1, 1))
    return ModelParams(
        alpha0=np.zeros(K),
        alpha=np.zeros((K, p)),
        beta0=beta0,
        beta=np.zeros((K, p, d)),
        sigma=sigma,
    )


# ---------------------------------------------------------------------------
# Full EM loop
# ---------------------------------------------------------------------------

def _beta_partial_objective(beta0_k, beta_k, Xa, gamma_t, ytQ, Q, lam, total):
    """Cluster mean subobjective up to an additive constant in beta."""
    Bmat = np.vstack([beta0_k[None, :], beta_k])
    MQ = (Xa @ Bmat) @ Q.T
    quad = float((gamma_t * np.einsum("td,td->t", MQ, MQ)).sum() - 2.0 * (MQ * ytQ).sum())
    return quad / (2.0 * total) + lam * float(np.abs(beta_k).sum())


def _run_single_em(X, Y, K, hyper, config, seed):
    yall, wall, tidx = Y.flat
    Xv = X.values
    T, p = Xv.shape
    d = Y.dim
    N = Y.total_weight
    floor = sigma_floor_value(Y)
    Xa = np.hstack([np.ones((T, 1)), Xv])

    params = init_params(X, Y, K, seed)
    log_mix, log_joint = particle_log_mixture(params, X, Y)
    prev_obj = float(-np.sum(wall * log_mix) / N + penalty_term(params, hyper))

    alpha_coef = np.zeros((p + 1, K - 1))
    admm_states = [None] * K
    trace = []
    converged = False
    empty_events = 0

    for _ in range(config.max_iter):
        gamma = np.exp(log_joint - log_mix[:, None])
        resp = Responsibilities(gamma)
        wgamma = wall[:, None] * gamma
        gamma_tk = np.stack(
            [np.bincount(tidx, weights=wgamma[:, k], minlength=T) for k in range(K)],
            axis=1,
        )
        mass = gamma_tk.sum(axis=0)

        # mixture coefficients (joint over clusters, warm started)
        coef, _ = fit_multinomial_lasso(
            Xv, gamma_tk, hyper.lambda_alpha, N,
            coef0=alpha_coef, config=config.alpha_solver,
        )
        alpha_coef = coef
        alpha0 = np.concatenate([coef[0], [0.0]])
        alpha = np.vstack([coef[1:].T, np.zeros((1, p))])

        # mean coefficients, one constrained lasso per active cluster
        beta0_new = params.beta0.copy()
        beta_new = params.beta.copy()
        chols = cholesky_factors(params.sigma)
        for k in range(K):
            if mass[k] < EMPTY_CLUSTER_FRACTION * N:
                empty_events += 1
                continue
            ytilde = np.stack(
                [np.bincount(tidx, weights=wgamma[:, k] * yall[:, a], minlength=T)
                 for a in range(d)],
                axis=1,
            )
            b0_cand, b_cand, info = solve_beta(
                Xv, gamma_tk[:, k], ytilde, params.sigma[k],
                hyper.lambda_beta, hyper.radius, N,
                config=config.admm, state=admm_states[k], cluster=k,
            )
            admm_states[k] = info["state"]
            dev = np.linalg.norm(Xv @ b_cand, axis=1).max() if p else 0.0
            if dev > hyper.radius:
                b_cand = b_cand * (hyper.radius / dev)
            Q = solve_triangular(chols[k], np.eye(d), lower=True, check_finite=False)
            ytQ = ytilde @ Q.T
            old_val = _beta_partial_objective(
                params.beta0[k], params.beta[k], Xa, gamma_tk[:, k], ytQ, Q,
                hyper.lambda_beta, N,
            )
            new_val = _beta_partial_objective(
                b0_cand, b_cand, Xa, gamma_tk[:, k], ytQ, Q,
                hyper.lambda_beta, N,
            )
            if new_val <= old_val:
                beta0_new[k] = b0_cand
                beta_new[k] = b_cand

        # covariances (closed form at the new means, floored)
        sigma_new, empties = m_step_sigma(
            resp, X, Y, beta0_new, beta_new, floor, previous=params.sigma,
        )
        empty_events += len(empties)

        params = ModelParams(alpha0, alpha, beta0_new, beta_new, sigma_new)
        log_mix, log_joint = particle_log_mixture(params, X, Y)
        obj = float(-np.sum(wall * log_mix) / N + penalty_term(params, hyper))
        if not np.isfinite(obj):
            raise NumericalError(f"objective became non-finite (seed {seed})")
        trace.append(obj)
        if prev_obj - obj < config.rel_tol * (1.0 + abs(prev_obj)):
            converged = True
            break
        prev_obj = obj

    gamma = np.exp(log_joint - log_mix[:, None])
    return {
        "params": params,
        "trace": np.array(trace),
        "final": trace[-1] if trace else prev_obj,
        "responsibilities": Responsibilities(gamma),
        "converged": converged,
        "empty_events": empty_events,
    }


def fit_em(X: CovariateSeries, Y: CytogramSeries, K: int, hyper: Hyperparams,
           config: EMConfig = EMConfig()) -> FitResult:
    """Run the penalized EM with restarts; keep the lowest final objective.

    Restarts are independent (derived seeds ``config.seed + restart``) and
    may run in parallel; the winner is schedule-independent.
    """
    Y.check_matches(X)

    def one(restart: int):
        try:
            return _run_single_em(X, Y, K, hyper, config, config.seed + restart)
        except NumericalError as exc:
            log.warning("restart %d failed: %s", restart, exc)
            return exc

    outcomes = thread_map(one, range(config.restarts), workers=config.workers)
    finals = [
        o["final"] if isinstance(o, dict) else float("nan") for o in outcomes
    ]
    ok = [i for i, o in enumerate(outcomes) if isinstance(o, dict)]
    if not ok:
        details = "; ".join(str(o) for o in outcomes)
        raise NumericalError(f"all {config.restarts} restarts diverged: {details}")
    winner = min(ok, key=lambda i: outcomes[i]["final"])
    best = outcomes[winner]
    return FitResult(
        params=best["params"],
        objective_trace=best["trace"],
        final_objective=best["final"],
        responsibilities=best["responsibilities"],
        winner_restart=winner,
        restart_objectives=finals,
        converged=best["converged"],
        empty_cluster_events=best["empty_events"],
    )
