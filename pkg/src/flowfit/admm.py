"""ADMM solver for one cluster's mean-regression update.

Per cluster, the update minimizes a responsibility-weighted quadratic in
(beta0, beta) plus lam * ||beta||_1, subject to ||beta^T x_t||_2 <= r at
every time point. Splitting introduces a sparse copy w of beta and
per-time copies z_t of beta^T x_t, giving three cheap alternating steps:

  1. (beta0, beta): one least-squares solve against a stacked system
     whose matrix D is iterate-independent (its factorization is cached).
  2. z: row-wise projection of X beta + U_z / rho onto the radius-r ball;
     w: entrywise soft-thresholding of beta + U_w / rho at lam / rho.
  3. dual ascent on U_z and U_w.

Iteration stops when the primal and dual residual Frobenius norms fall
under relative thresholds. The returned slope matrix is the w copy, which
carries exact zeros.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import NumericalError

__all__ = [
    "AdmmConfig",
    "AdmmState",
    "project_ball",
    "soft_threshold",
    "dual_updates",
    "assemble_least_squares",
    "convergence_check",
    "solve_beta",
]


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 1.0
    max_iter: int = 1000
    eps_rel: float = 1e-3
    # absolute floor on the residual thresholds; without it a cluster whose
    # solution is exactly zero never satisfies the relative rule
    eps_abs: float = 1e-7
    adaptive_rho: bool = True

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.eps_rel < 0 or self.eps_abs < 0:
            raise ValueError("tolerances must be nonnegative")


@dataclass
class AdmmState:
    """Iterate bundle: b is the vectorized [beta0^T; beta] (column-major).

    ``rho`` remembers the adapted penalty so warm restarts resume at the
    scale the previous solve settled on.
    """

    b: np.ndarray       # ((p+1)d,)
    Z: np.ndarray       # (T, d)
    w: np.ndarray       # (p, d)
    U_z: np.ndarray     # (T, d)
    U_w: np.ndarray     # (p, d)
    rho: float | None = None

    @classmethod
    def zeros(cls, T: int, p: int, d: int) -> "AdmmState":
        return cls(
            b=np.zeros((p + 1) * d),
            Z=np.zeros((T, d)),
            w=np.zeros((p, d)),
            U_z=np.zeros((T, d)),
            U_w=np.zeros((p, d)),
        )


def unpack_b(b: np.ndarray, p: int, d: int):
    """Split the stacked coefficient vector into (beta0 (d,), beta (p, d))."""
    mat = b.reshape((p + 1, d), order="F")
    return mat[0].copy(), mat[1:].copy()


def pack_b(beta0: np.ndarray, beta: np.ndarray) -> np.ndarray:
    return np.vstack([beta0[None, :], beta]).reshape(-1, order="F")


def project_ball(V: np.ndarray, radius: float) -> np.ndarray:
    """Scale each row of V onto the closed L2 ball of the given radius."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    norms2 = np.einsum("ij,ij->i", V, V)
    over = norms2 > radius * radius
    if not over.any():
        return V.copy()
    factor = np.ones(V.shape[0])
    factor[over] = radius / np.sqrt(norms2[over])
    return V * factor[:, None]


def soft_threshold(A: np.ndarray, t: float) -> np.ndarray:
    """Entrywise sign(a) * max(|a| - t, 0)."""
    A = np.asarray(A, dtype=float)
    return np.sign(A) * np.maximum(np.abs(A) - t, 0.0)


def dual_updates(state: AdmmState, X: np.ndarray, beta: np.ndarray,
                 rho: float):
    """Dual ascent: U_z += rho (X beta - Z), U_w += rho (beta - w)."""
    U_z = state.U_z + rho * (X @ beta - state.Z)
    U_w = state.U_w + rho * (beta - state.w)
    return U_z, U_w


def _sqrt_weights(gamma_t: np.ndarray):
    sqrt_w = np.sqrt(gamma_t)
    inv_sqrt = np.zeros_like(sqrt_w)
    pos = gamma_t > 0
    inv_sqrt[pos] = 1.0 / sqrt_w[pos]
    return sqrt_w, inv_sqrt


def _sigma_inv_factor(sigma: np.ndarray, cluster: int | None) -> np.ndarray:
    """Q with Q^T Q = Sigma^{-1}, from Sigma's Cholesky factor."""
    try:
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        where = f" of cluster {cluster + 1}" if cluster is not None else ""
        raise NumericalError(f"covariance{where} is not positive definite") from exc
    d = sigma.shape[0]
    return solve_triangular(L, np.eye(d), lower=True, check_finite=False)


def _design_blocks(X: np.ndarray, gamma_t: np.ndarray, Q: np.ndarray,
                   rho: float, total_weight: float):
    """The three row blocks of D (iterate-independent)."""
    T, p = X.shape
    d = Q.shape[0]
    Xa = np.hstack([np.ones((T, 1)), X])
    sqrt_w, _ = _sqrt_weights(gamma_t)
    s_data = np.sqrt(0.5 / total_weight)
    block_data = s_data * np.kron(Q, sqrt_w[:, None] * Xa)

    s_rho = np.sqrt(0.5 * rho)
    # selection of vec(beta) out of b: drops the d intercept positions
    sel = np.zeros((p * d, (p + 1) * d))
    for m in range(d):
        for j in range(p):
            sel[m * p + j, m * (p + 1) + 1 + j] = 1.0
    block_w = s_rho * sel

    block_z = np.zeros((T * d, (p + 1) * d))
    for a in range(d):
        rows = np.arange(T) * d + a
        block_z[rows, a * (p + 1) + 1: (a + 1) * (p + 1)] = X
    block_z *= s_rho
    return block_data, block_w, block_z


def assemble_least_squares(X: np.ndarray, gamma_t: np.ndarray,
                           ytilde: np.ndarray, sigma: np.ndarray,
                           state: AdmmState, rho: float, total_weight: float,
                           cluster: int | None = None):
    """Full stacked system (c, D) for the coefficient update.

    gamma_t is the per-time responsibility mass (multiplicities included)
    and ytilde the matching (T, d) weighted coordinate sums, so row t of
    ytilde / gamma_t is the cluster's target mean at time t.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Q = _sigma_inv_factor(np.atleast_2d(sigma), cluster)
    block_data, block_w, block_z = _design_blocks(X, gamma_t, Q, rho, total_weight)
    D = np.vstack([block_data, block_w, block_z])

    _, inv_sqrt = _sqrt_weights(gamma_t)
    s_data = np.sqrt(0.5 / total_weight)
    c_data = s_data * ((inv_sqrt[:, None] * ytilde) @ Q.T).reshape(-1, order="F")
    if rho > 0:
        s_rho = np.sqrt(0.5 * rho)
        c_w = s_rho * (state.w - state.U_w / rho).reshape(-1, order="F")
        c_z = s_rho * (state.Z - state.U_z / rho).reshape(-1)  # row-major == vec(Z^T)
    else:
        c_w = np.zeros(block_w.shape[0])
        c_z = np.zeros(block_z.shape[0])
    return np.concatenate([c_data, c_w, c_z]), D


def convergence_check(state: AdmmState, Z_prev: np.ndarray, w_prev: np.ndarray,
                      X: np.ndarray, beta: np.ndarray, rho: float,
                      eps_rel: float, eps_abs: float = 0.0):
    """Primal/dual residual norms and their thresholds.

    The canonical-form constraint stacks (beta - w; X beta - Z); the dual
    residual folds the change in (w; Z) back through X. With eps_abs = 0
    the rule is purely relative.
    """
    T, p = X.shape
    d = beta.shape[1]
    r_pri = np.vstack([beta - state.w, X @ beta - state.Z])
    s_dual = -rho * ((state.w - w_prev) + X.T @ (state.Z - Z_prev))
    pri_norm = float(np.linalg.norm(r_pri))
    dual_norm = float(np.linalg.norm(s_dual))
    ax_norm = np.linalg.norm(np.vstack([beta, X @ beta]))
    bz_norm = np.linalg.norm(np.vstack([state.w, state.Z]))
    eps_pri = eps_abs * np.sqrt((T + p) * d) + eps_rel * max(ax_norm, bz_norm)
    eps_dual = (eps_abs * np.sqrt(p * d)
                + eps_rel * float(np.linalg.norm(state.U_w + X.T @ state.U_z)))
    converged = pri_norm <= eps_pri and dual_norm <= eps_dual
    return pri_norm, dual_norm, eps_pri, eps_dual, converged


def _frob(a: np.ndarray) -> float:
    return float(np.sqrt(np.einsum("ij,ij->", a, a)))


def solve_beta(X: np.ndarray, gamma_t: np.ndarray, ytilde: np.ndarray,
               sigma: np.ndarray, lam: float, radius: float,
               total_weight: float, config: AdmmConfig = AdmmConfig(),
               state: AdmmState | None = None, cluster: int | None = None):
    """Run ADMM for one cluster; returns (beta0, beta, info).

    ``beta`` is the w copy (exactly sparse); the intercept comes from the
    least-squares iterate. A warm ``state`` from a previous call speeds up
    repeated solves inside EM. info carries convergence diagnostics and
    the final state.

    The coefficient update solves the stacked system of
    ``assemble_least_squares`` through its normal equations, assembled
    incrementally: the Gram matrix is G_data + (rho/2) G_couple with both
    pieces fixed across iterations, and the right-hand side couples the
    (w, Z) iterates only through non-intercept coordinates.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T, p = X.shape
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = sigma.shape[0]
    ytilde = np.asarray(ytilde, dtype=float).reshape(T, d)
    if state is None:
        state = AdmmState.zeros(T, p, d)

    rho = state.rho if state.rho is not None else config.rho
    Q = _sigma_inv_factor(sigma, cluster)

    # iterate-independent pieces of the normal equations
    Xa = np.hstack([np.ones((T, 1)), X])
    sqrt_w, inv_sqrt = _sqrt_weights(gamma_t)
    WXa = sqrt_w[:, None] * Xa
    G_data = np.kron(Q.T @ Q, WXa.T @ WXa) / (2.0 * total_weight)
    couple_block = np.zeros((p + 1, p + 1))
    couple_block[1:, 1:] = np.eye(p) + X.T @ X
    G_couple = np.kron(np.eye(d), couple_block)
    s_data = np.sqrt(0.5 / total_weight)
    c_data = s_data * ((inv_sqrt[:, None] * ytilde) @ Q.T).reshape(-1, order="F")
    Dt_c_data = np.kron(Q, WXa).T @ c_data * s_data
    slope_rows = np.ones((p + 1) * d, dtype=bool)
    slope_rows[:: p + 1] = False  # intercept positions in b

    def factor(rho):
        try:
            return cho_factor(G_data + 0.5 * rho * G_couple)
        except np.linalg.LinAlgError as exc:
            where = f" for cluster {cluster + 1}" if cluster is not None else ""
            raise NumericalError(
                f"least-squares system{where} is rank deficient"
            ) from exc

    fac = factor(rho)

    best = None
    info = {"converged": False, "iterations": 0}
    for it in range(config.max_iter):
        target = (state.w - state.U_w / rho) + X.T @ (state.Z - state.U_z / rho)
        rhs = Dt_c_data.copy()
        rhs[slope_rows] += 0.5 * rho * target.reshape(-1, order="F")
        state.b = cho_solve(fac, rhs, check_finite=False)
        beta0, beta = unpack_b(state.b, p, d)

        Z_prev, w_prev = state.Z, state.w
        Xbeta = X @ beta
        state.Z = project_ball(Xbeta + state.U_z / rho, radius)
        state.w = soft_threshold(beta + state.U_w / rho, lam / rho)
        state.U_z = state.U_z + rho * (Xbeta - state.Z)
        state.U_w = state.U_w + rho * (beta - state.w)

        # primal/dual residuals and thresholds (Frobenius norms)
        pri = np.sqrt(_frob(beta - state.w) ** 2 + _frob(Xbeta - state.Z) ** 2)
        dual = rho * _frob((state.w - w_prev) + X.T @ (state.Z - Z_prev))
        ax = np.sqrt(_frob(beta) ** 2 + _frob(Xbeta) ** 2)
        bz = np.sqrt(_frob(state.w) ** 2 + _frob(state.Z) ** 2)
        eps_pri = config.eps_abs * np.sqrt((T + p) * d) + config.eps_rel * max(ax, bz)
        eps_dual = (config.eps_abs * np.sqrt(p * d)
                    + config.eps_rel * _frob(state.U_w + X.T @ state.U_z))

        if best is None or pri + dual <= best[0]:
            best = (pri + dual, beta0, state.w.copy())
        if pri <= eps_pri and dual <= eps_dual:
            info["converged"] = True
            break
        # rescale rho on a schedule; adapting every step oscillates
        if config.adaptive_rho and it % 8 == 7:
            if pri > 10.0 * dual and rho < 1e6:
                rho *= 2.0
            elif dual > 10.0 * pri and rho > 1e-6:
                rho *= 0.5
            else:
                continue
            fac = factor(rho)

    state.rho = rho
    info["iterations"] = it + 1
    info["primal_norm"], info["dual_norm"] = pri, dual
    info["state"] = state
    info["rho"] = rho
    if info["converged"]:
        return beta0, state.w.copy(), info
    return best[1], best[2], info
