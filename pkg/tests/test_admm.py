import numpy as np
import pytest

from flowfit import AdmmConfig, NumericalError, project_ball, soft_threshold, solve_beta
from flowfit.admm import (
    AdmmState,
    assemble_least_squares,
    convergence_check,
    dual_updates,
    pack_b,
    unpack_b,
)

from oracles import (
    beta_objective,
    cd_lasso_oracle,
    constrained_lasso_oracle,
    grid_search_oracle,
)


def random_subproblem(rng, T=5, p=2, d=1, spread=2.0):
    X = rng.standard_normal((T, p))
    gamma_t = rng.uniform(0.5, 3.0, T)
    ybar = rng.normal(0.0, spread, (T, d))
    ytilde = gamma_t[:, None] * ybar
    A = rng.standard_normal((d, d))
    sigma = A @ A.T + np.eye(d)
    total = float(gamma_t.sum())
    return X, gamma_t, ybar, ytilde, sigma, total


class TestProjectBall:
    def test_interior_untouched(self):
        np.testing.assert_array_equal(project_ball([[3.0, 4.0]], 10.0), [[3.0, 4.0]])

    def test_boundary_scaling(self):
        np.testing.assert_allclose(project_ball([[3.0, 4.0]], 1.0), [[0.6, 0.8]])

    def test_zero_fixed(self):
        np.testing.assert_array_equal(project_ball([[0.0, 0.0]], 0.5), [[0.0, 0.0]])

    def test_idempotent_and_nonexpansive(self, rng):
        for _ in range(30):
            u = rng.normal(0, 3, (6, 2))
            v = rng.normal(0, 3, (6, 2))
            r = rng.uniform(0.2, 2.0)
            pu, pv = project_ball(u, r), project_ball(v, r)
            np.testing.assert_allclose(project_ball(pu, r), pu, atol=1e-12)
            assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-12


class TestSoftThreshold:
    def test_basic_values(self):
        assert soft_threshold(np.array([1.2]), 0.5)[0] == pytest.approx(0.7)
        assert soft_threshold(np.array([-0.3]), 0.5)[0] == 0.0

    def test_zero_threshold_identity(self, rng):
        A = rng.standard_normal((3, 4))
        np.testing.assert_array_equal(soft_threshold(A, 0.0), A)

    def test_never_exceeds_and_zero_pattern_monotone(self, rng):
        A = rng.normal(0, 2, (5, 3))
        prev_zeros = np.zeros(A.shape, dtype=bool)
        for t in (0.1, 0.5, 1.0, 2.5):
            S = soft_threshold(A, t)
            assert np.all(np.abs(S) <= np.abs(A))
            zeros = S == 0.0
            assert np.all(zeros | ~prev_zeros)
            prev_zeros = zeros


class TestDualUpdates:
    def test_feasible_fixed_point(self, rng):
        T, p, d = 4, 3, 2
        X = rng.standard_normal((T, p))
        beta = rng.standard_normal((p, d))
        state = AdmmState.zeros(T, p, d)
        state.Z = X @ beta
        state.w = beta.copy()
        U_z, U_w = dual_updates(state, X, beta, rho=1.7)
        np.testing.assert_allclose(U_z, 0.0, atol=1e-14)
        np.testing.assert_allclose(U_w, 0.0, atol=1e-14)

    def test_unit_rho_increment(self, rng):
        T, p, d = 3, 2, 1
        X = rng.standard_normal((T, p))
        beta = rng.standard_normal((p, d))
        state = AdmmState.zeros(T, p, d)
        state.Z = rng.standard_normal((T, d))
        U_z, _ = dual_updates(state, X, beta, rho=1.0)
        np.testing.assert_allclose(U_z, X @ beta - state.Z, atol=1e-15)

    def test_matches_elementwise_loop(self, rng):
        T, p, d = 5, 3, 2
        X = rng.standard_normal((T, p))
        beta = rng.standard_normal((p, d))
        state = AdmmState.zeros(T, p, d)
        state.Z = rng.standard_normal((T, d))
        state.w = rng.standard_normal((p, d))
        state.U_z = rng.standard_normal((T, d))
        state.U_w = rng.standard_normal((p, d))
        rho = 0.7
        U_z, U_w = dual_updates(state, X, beta, rho)
        for t in range(T):
            expect = state.U_z[t] + rho * (beta.T @ X[t] - state.Z[t])
            np.testing.assert_allclose(U_z[t], expect, atol=1e-14)
        for j in range(p):
            expect = state.U_w[j] + rho * (beta[j] - state.w[j])
            np.testing.assert_allclose(U_w[j], expect, atol=1e-14)


class TestAssemble:
    def test_zero_rho_blocks_vanish(self, rng):
        X, gamma_t, ybar, ytilde, sigma, total = random_subproblem(rng, d=2)
        T, p = X.shape
        d = 2
        state = AdmmState.zeros(T, p, d)
        c, D = assemble_least_squares(X, gamma_t, ytilde, sigma, state, 0.0, total)
        assert np.all(D[T * d:] == 0.0)
        assert np.all(c[T * d:] == 0.0)

    def test_d1_kronecker_collapse(self, rng):
        X, gamma_t, ybar, ytilde, sigma, total = random_subproblem(rng, d=1)
        T, p = X.shape
        state = AdmmState.zeros(T, p, 1)
        c, D = assemble_least_squares(X, gamma_t, ytilde, sigma, state, 1.0, total)
        Xa = np.hstack([np.ones((T, 1)), X])
        expect = np.sqrt(0.5 / total) * np.sqrt(gamma_t)[:, None] * Xa / np.sqrt(sigma[0, 0])
        np.testing.assert_allclose(D[:T], expect, atol=1e-12)

    def test_normal_equations_match_qr(self, rng):
        X, gamma_t, ybar, ytilde, sigma, total = random_subproblem(rng, T=6, p=3, d=2)
        T, p, d = 6, 3, 2
        state = AdmmState.zeros(T, p, d)
        state.Z = rng.standard_normal((T, d))
        state.w = rng.standard_normal((p, d))
        state.U_z = rng.standard_normal((T, d))
        state.U_w = rng.standard_normal((p, d))
        c, D = assemble_least_squares(X, gamma_t, ytilde, sigma, state, 1.3, total)
        normal = np.linalg.solve(D.T @ D, D.T @ c)
        qr = np.linalg.lstsq(D, c, rcond=None)[0]
        np.testing.assert_allclose(normal, qr, atol=1e-9)

    def test_pack_unpack_roundtrip(self, rng):
        beta0 = rng.standard_normal(3)
        beta = rng.standard_normal((4, 3))
        b0, b = unpack_b(pack_b(beta0, beta), 4, 3)
        np.testing.assert_array_equal(b0, beta0)
        np.testing.assert_array_equal(b, beta)


class TestConvergenceCheck:
    def test_stationary_feasible_converges(self, rng):
        T, p, d = 4, 2, 1
        X = rng.standard_normal((T, p))
        beta = rng.standard_normal((p, d))
        state = AdmmState.zeros(T, p, d)
        state.Z = X @ beta
        state.w = beta.copy()
        pri, dual, _, _, ok = convergence_check(
            state, state.Z.copy(), state.w.copy(), X, beta, 1.0, 1e-3
        )
        assert pri == 0.0 and dual == 0.0 and ok

    def test_zero_eps_requires_exact_zero(self, rng):
        T, p, d = 3, 2, 1
        X = rng.standard_normal((T, p))
        beta = rng.standard_normal((p, d))
        state = AdmmState.zeros(T, p, d)
        state.Z = X @ beta + 1e-9
        state.w = beta.copy()
        *_, ok = convergence_check(state, state.Z, state.w, X, beta, 1.0, 0.0)
        assert not ok

    def test_residuals_match_block_matrix_oracle(self, rng):
        T, p, d = 5, 3, 2
        X = rng.standard_normal((T, p))
        beta0 = rng.standard_normal(d)
        beta = rng.standard_normal((p, d))
        state = AdmmState.zeros(T, p, d)
        state.Z = rng.standard_normal((T, d))
        state.w = rng.standard_normal((p, d))
        state.U_z = rng.standard_normal((T, d))
        state.U_w = rng.standard_normal((p, d))
        Z_prev = rng.standard_normal((T, d))
        w_prev = rng.standard_normal((p, d))
        rho = 1.9

        A = np.zeros((p + T, p + 1))
        A[:p, 1:] = np.eye(p)
        A[p:, 1:] = X
        B = -np.eye(p + T)
        Bmat = np.vstack([beta0[None, :], beta])
        r_oracle = A @ Bmat + B @ np.vstack([state.w, state.Z])
        s_oracle = rho * (A.T @ B @ np.vstack([state.w - w_prev, state.Z - Z_prev]))
        assert np.allclose(s_oracle[0], 0.0)

        pri, dual, eps_pri, eps_dual, _ = convergence_check(
            state, Z_prev, w_prev, X, beta, rho, 1e-3
        )
        assert pri == pytest.approx(np.linalg.norm(r_oracle), rel=1e-12)
        assert dual == pytest.approx(np.linalg.norm(s_oracle[1:]), rel=1e-12)
        ax = np.linalg.norm(A @ Bmat)
        bz = np.linalg.norm(B @ np.vstack([state.w, state.Z]))
        assert eps_pri == pytest.approx(1e-3 * max(ax, bz), rel=1e-12)
        assert eps_dual == pytest.approx(
            1e-3 * np.linalg.norm((A.T @ np.vstack([state.U_w, state.U_z]))[1:]),
            rel=1e-12,
        )


class TestSolveBeta:
    def test_full_shrinkage_gives_weighted_mean_intercept(self, rng):
        X, gamma_t, ybar, ytilde, sigma, total = random_subproblem(rng, d=2)
        beta0, beta, info = solve_beta(
            X, gamma_t, ytilde, sigma, lam=1e6, radius=50.0, total_weight=total,
            config=AdmmConfig(max_iter=2000, eps_rel=1e-9),
        )
        np.testing.assert_allclose(beta, 0.0, atol=1e-12)
        expected = (gamma_t[:, None] * ybar).sum(axis=0) / gamma_t.sum()
        np.testing.assert_allclose(beta0, expected, atol=1e-6)

    def test_matches_constrained_oracle_toy(self):
        rng = np.random.default_rng(42)
        X, gamma_t, ybar, ytilde, sigma, total = random_subproblem(rng, T=5, p=2, d=1)
        lam, radius = 0.1, 0.5
        beta0, beta, info = solve_beta(
            X, gamma_t, ytilde, sigma, lam, radius, total,
            config=AdmmConfig(max_iter=4000, eps_rel=1e-7),
        )
        ob0, ob, oval = constrained_lasso_oracle(
            X, gamma_t, ybar, sigma, lam, radius, total
        )
        sigma_inv = np.linalg.inv(sigma)
        ours = beta_objective(beta0, beta, X, gamma_t, ybar, sigma_inv, lam, total)
        assert abs(ours - oval) < 1e-4
        assert np.linalg.norm(X @ beta, axis=1).max() <= radius * 1.001

    def test_oracle_agrees_with_grid_search(self):
        # cross-check the two independent references against each other
        rng = np.random.default_rng(7)
        X, gamma_t, ybar, ytilde, sigma, total = random_subproblem(rng, T=5, p=2, d=1)
        lam, radius = 0.05, 0.4
        ob0, ob, oval = constrained_lasso_oracle(
            X, gamma_t, ybar, sigma, lam, radius, total
        )
        gval, *_ = grid_search_oracle(
            X, gamma_t, ybar, float(sigma[0, 0]), lam, radius, total
        )
        assert abs(oval - gval) < 5e-4

    def test_inactive_constraint_matches_cd_lasso(self):
        rng = np.random.default_rng(3)
        X, gamma_t, ybar, ytilde, sigma, total = random_subproblem(rng, T=8, p=3, d=1)
        lam = 0.02
        cd0, cd = cd_lasso_oracle(X, gamma_t, ybar, float(sigma[0, 0]), lam, total)
        slack_radius = np.abs(X @ cd).max() * 3.0 + 1.0
        beta0, beta, info = solve_beta(
            X, gamma_t, ytilde, sigma, lam, slack_radius, total,
            config=AdmmConfig(max_iter=6000, eps_rel=1e-9),
        )
        assert abs(beta0[0] - cd0) < 1e-5
        np.testing.assert_allclose(beta[:, 0], cd, atol=1e-5)

    def test_objective_near_oracle_across_seeds(self):
        # convex toy instances across shapes and seeds
        close = 0
        cases = 0
        for seed in range(10):
            rng = np.random.default_rng(100 + seed)
            p = int(rng.integers(1, 4))
            d = int(rng.integers(1, 3))
            T = int(rng.integers(3, 11))
            X, gamma_t, ybar, ytilde, sigma, total = random_subproblem(
                rng, T=T, p=p, d=d
            )
            lam = float(rng.uniform(0.01, 0.3))
            radius = float(rng.uniform(0.3, 1.5))
            beta0, beta, _ = solve_beta(
                X, gamma_t, ytilde, sigma, lam, radius, total,
                config=AdmmConfig(max_iter=5000, eps_rel=1e-8),
            )
            ob0, ob, oval = constrained_lasso_oracle(
                X, gamma_t, ybar, sigma, lam, radius, total, tol=1e-12
            )
            sigma_inv = np.linalg.inv(sigma)
            ours = beta_objective(beta0, beta, X, gamma_t, ybar, sigma_inv, lam, total)
            cases += 1
            if ours <= oval + 1e-4:
                close += 1
            assert np.linalg.norm(X @ beta, axis=1).max() <= radius * 1.001
        assert close == cases

    def test_nonconvergence_returns_warning_flag(self, rng):
        X, gamma_t, ybar, ytilde, sigma, total = random_subproblem(rng, d=1)
        _, _, info = solve_beta(
            X, gamma_t, ytilde, sigma, 0.1, 0.5, total,
            config=AdmmConfig(max_iter=2, eps_rel=1e-12),
        )
        assert info["converged"] is False
        assert info["iterations"] == 2

    def test_rank_deficient_names_cluster(self):
        X = np.zeros((4, 2))
        gamma_t = np.zeros(4)  # no mass: data block vanishes, rho=0 kills rest
        ytilde = np.zeros((4, 1))
        with pytest.raises(NumericalError, match="cluster 3"):
            solve_beta(X, gamma_t, ytilde, np.eye(1), 0.1, 1.0, 1.0,
                       config=AdmmConfig(rho=1e-300), cluster=2)
