"""Independent reference solvers used only by the test suite.

These deliberately share no code with the package: the constrained-lasso
oracle is a projected proximal gradient whose prox (L1 + ball-intersection
indicator) is computed by Dykstra splitting, and the unconstrained check
is a plain coordinate-descent lasso.
"""

import numpy as np


def beta_objective(beta0, beta, X, gamma_t, ybar, sigma_inv, lam, total):
    """Completed-square cluster subobjective (constant dropped)."""
    mu = beta0[None, :] + X @ beta
    diff = mu - ybar
    quad = float(np.einsum("t,td,de,te->", gamma_t, diff, sigma_inv, diff))
    return quad / (2.0 * total) + lam * float(np.abs(beta).sum())


def _project_slab(beta, x, radius):
    """Project onto {B : ||B^T x||_2 <= radius} (affine fiber pullback)."""
    v = beta.T @ x
    norm = np.linalg.norm(v)
    if norm <= radius or norm == 0.0:
        return beta
    target = v * (radius / norm)
    return beta + np.outer(x, target - v) / (x @ x)


def project_intersection(beta, X, radius, iters=4000, tol=1e-14):
    """Dykstra's cyclic projection onto all per-time slabs."""
    T = X.shape[0]
    corrections = [np.zeros_like(beta) for _ in range(T)]
    current = beta.copy()
    for _ in range(iters):
        prev = current.copy()
        for t in range(T):
            if not np.any(X[t]):
                continue
            candidate = current + corrections[t]
            projected = _project_slab(candidate, X[t], radius)
            corrections[t] = candidate - projected
            current = projected
        dev = np.linalg.norm(X @ current, axis=1).max() if T else 0.0
        if dev <= radius * (1 + 1e-12) and np.abs(current - prev).max() < tol:
            break
    return current


def _soft(A, t):
    return np.sign(A) * np.maximum(np.abs(A) - t, 0.0)


def prox_l1_ball(v, step_lam, X, radius, iters=2000, tol=1e-14):
    """prox of step_lam * ||.||_1 + indicator(ball intersection), by Dykstra."""
    x = v.copy()
    p = np.zeros_like(v)
    q = np.zeros_like(v)
    for _ in range(iters):
        y = _soft(x + p, step_lam)
        p = x + p - y
        x_new = project_intersection(y + q, X, radius)
        q = y + q - x_new
        if np.abs(x_new - x).max() < tol:
            x = x_new
            break
        x = x_new
    return x


def constrained_lasso_oracle(X, gamma_t, ybar, sigma, lam, radius, total,
                             tol=1e-10, max_iter=20000):
    """Projected proximal gradient for the full cluster subproblem.

    Returns (beta0, beta, objective). Deliberately slow and simple.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T, p = X.shape
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = sigma.shape[0]
    sigma_inv = np.linalg.inv(sigma)
    ybar = np.asarray(ybar, dtype=float).reshape(T, d)

    Xa = np.hstack([np.ones((T, 1)), X])
    hess_x = (Xa.T * gamma_t) @ Xa / total
    L = np.linalg.eigvalsh(hess_x)[-1] * np.linalg.eigvalsh(sigma_inv)[-1]
    step = 1.0 / L

    beta0 = np.zeros(d)
    beta = np.zeros((p, d))
    prev = beta_objective(beta0, beta, X, gamma_t, ybar, sigma_inv, lam, total)
    for _ in range(max_iter):
        mu = beta0[None, :] + X @ beta
        r = (gamma_t[:, None] * (mu - ybar)) @ sigma_inv / total
        g0 = r.sum(axis=0)
        gB = X.T @ r
        beta0 = beta0 - step * g0
        beta = prox_l1_ball(beta - step * gB, step * lam, X, radius)
        val = beta_objective(beta0, beta, X, gamma_t, ybar, sigma_inv, lam, total)
        if abs(prev - val) < tol * (1.0 + abs(val)):
            break
        prev = val
    return beta0, beta, val


def cd_lasso_oracle(X, gamma_t, ybar, sigma2, lam, total, iters=5000, tol=1e-13):
    """Coordinate descent for the unconstrained weighted lasso, d = 1."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T, p = X.shape
    y = np.asarray(ybar, dtype=float).reshape(T)
    w = gamma_t / (total * sigma2)

    beta0 = 0.0
    beta = np.zeros(p)
    for _ in range(iters):
        old = beta.copy()
        fit = X @ beta
        beta0 = float(np.sum(w * (y - fit)) / np.sum(w))
        for j in range(p):
            partial = y - beta0 - fit + X[:, j] * beta[j]
            a = float(np.sum(w * X[:, j] ** 2))
            c = float(np.sum(w * X[:, j] * partial))
            beta[j] = _soft(np.array(c), lam) / a if a > 0 else 0.0
            fit = X @ beta
        if np.abs(beta - old).max() < tol:
            break
    return beta0, beta


def grid_search_oracle(X, gamma_t, ybar, sigma2, lam, radius, total,
                       rounds=6, width=4.0, points=25):
    """Nested dense grid search for d=1, p=2 (three free parameters)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T, p = X.shape
    assert p == 2
    y = np.asarray(ybar, dtype=float).reshape(T)
    w = gamma_t / (total * sigma2)

    center = np.zeros(3)
    span = width
    best = None
    for _ in range(rounds):
        axes = [np.linspace(center[i] - span, center[i] + span, points) for i in range(3)]
        B0, B1, B2 = np.meshgrid(*axes, indexing="ij")
        fit = (B0[..., None] + B1[..., None] * X[:, 0] + B2[..., None] * X[:, 1])
        quad = 0.5 * np.sum(w * (fit - y) ** 2, axis=-1)
        pen = lam * (np.abs(B1) + np.abs(B2))
        dev = np.abs(B1[..., None] * X[:, 0] + B2[..., None] * X[:, 1]).max(axis=-1)
        obj = np.where(dev <= radius, quad + pen, np.inf)
        flat = np.argmin(obj)
        i, j, k = np.unravel_index(flat, obj.shape)
        best = (float(obj[i, j, k]), float(B0[i, j, k]), float(B1[i, j, k]), float(B2[i, j, k]))
        center = np.array(best[1:])
        span = span * 2.5 / (points - 1)
    return best
