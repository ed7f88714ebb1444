"""L1-penalized weighted multinomial logistic regression.

Solves the mixture-weight update: given per-time soft cluster masses
gamma[t, k] (responsibility sums, multiplicities included), maximize the
weighted multinomial log-likelihood of the softmax probabilities
softmax_k(a0_k + x_t . a_k) minus an L1 penalty on the slope vectors.
Intercepts are unpenalized, and the last cluster's coefficients are pinned
at zero as the softmax reference category.

The solver is proximal gradient (ISTA) with backtracking line search,
optionally FISTA-accelerated. Each accepted step decreases the penalized
objective, so a warm-started call never returns a worse point than it was
given — the EM driver relies on that.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

__all__ = ["MultinomialConfig", "smooth_objective", "fit_multinomial_lasso"]


@dataclass(frozen=True)
class MultinomialConfig:
    max_iter: int = 400
    tol: float = 1e-9
    accelerate: bool = False


def smooth_objective(coef: np.ndarray, Xa: np.ndarray, gamma: np.ndarray,
                     scale: float):
    """Smooth part of the objective and its gradient.

    coef  : (p+1, K-1) free coefficients, row 0 the intercepts
    Xa    : (T, p+1) intercept-augmented covariates
    gamma : (T, K) nonnegative soft cluster masses
    scale : total multiplicity N dividing the log-likelihood

    Returns ``(value, grad)`` with grad shaped like ``coef``.
    """
    T, K = gamma.shape
    row_mass = gamma.sum(axis=1)
    logits = np.zeros((T, K))
    logits[:, : K - 1] = Xa @ coef
    # one max-shifted pass gives both log-sum-exp and the softmax
    shift = logits.max(axis=1, keepdims=True)
    expl = np.exp(logits - shift)
    norm = expl.sum(axis=1)
    lse = shift[:, 0] + np.log(norm)
    value = -(np.sum(gamma[:, : K - 1] * logits[:, : K - 1]) - row_mass @ lse) / scale
    probs = expl[:, : K - 1] / norm[:, None]
    resid = (row_mass[:, None] * probs - gamma[:, : K - 1]) / scale
    grad = Xa.T @ resid
    return value, grad


def _soft_threshold_slopes(coef: np.ndarray, amount: float) -> np.ndarray:
    out = coef.copy()
    s = coef[1:]
    out[1:] = np.sign(s) * np.maximum(np.abs(s) - amount, 0.0)
    return out


def _penalty(coef: np.ndarray, lam: float) -> float:
    return lam * float(np.abs(coef[1:]).sum())


def fit_multinomial_lasso(X: np.ndarray, gamma: np.ndarray, lam: float,
                          scale: float, coef0: np.ndarray | None = None,
                          config: MultinomialConfig = MultinomialConfig()):
    """Minimize smooth_objective + lam * ||slopes||_1.

    Returns ``(coef, info)`` where coef is (p+1, K-1) and info carries the
    iteration count and final objective.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T, p = X.shape
    K = gamma.shape[1]
    Xa = np.hstack([np.ones((T, 1)), X])
    coef = np.zeros((p + 1, K - 1)) if coef0 is None else np.array(coef0, dtype=float)

    value, grad = smooth_objective(coef, Xa, gamma, scale)
    objective = value + _penalty(coef, lam)
    step = 1.0
    momentum = coef.copy()
    t_acc = 1.0

    for it in range(config.max_iter):
        base = momentum if config.accelerate else coef
        if config.accelerate:
            value, grad = smooth_objective(base, Xa, gamma, scale)

        # backtracking on the quadratic majorization of the smooth part
        for _ in range(60):
            cand = _soft_threshold_slopes(base - step * grad, step * lam)
            diff = cand - base
            cand_value, cand_grad = smooth_objective(cand, Xa, gamma, scale)
            bound = value + np.sum(grad * diff) + np.sum(diff * diff) / (2.0 * step)
            if cand_value <= bound + 1e-15:
                break
            step *= 0.5
        else:
            raise NumericalError("line search failed in the mixture-weight solver")

        cand_objective = cand_value + _penalty(cand, lam)
        if not np.isfinite(cand_objective):
            raise NumericalError(
                f"mixture-weight solver produced a non-finite objective at iteration {it}"
            )

        if config.accelerate:
            if cand_objective > objective:
                # restart momentum from the best known point
                momentum = coef.copy()
                t_acc = 1.0
                value, grad = smooth_objective(coef, Xa, gamma, scale)
                continue
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc))
            momentum = cand + ((t_acc - 1.0) / t_next) * (cand - coef)
            t_acc = t_next
        improved = objective - cand_objective
        if cand_objective <= objective:
            coef = cand
            objective = cand_objective
            if not config.accelerate:
                value, grad = cand_value, cand_grad
        elif not config.accelerate:
            value, grad = smooth_objective(coef, Xa, gamma, scale)
        step = min(step * 2.0, 1e8)
        if 0 <= improved < config.tol * (1.0 + abs(objective)):
            break

    return coef, {"iterations": it + 1, "objective": objective}
