"""Regularization selection by every-Nth-time-point cross-validation.

Folds interleave time: fold o holds time positions {o, o+nfolds, ...}, so
every fold spans the whole series. Each grid cell (lambda_alpha,
lambda_beta) is scored by the average held-out multiplicity-weighted
negative log-likelihood over folds, and the winner is refit on all data.
"""

import logging
from dataclasses import dataclass

import numpy as np

from ._parallel import thread_map
from .data import CovariateSeries, CytogramSeries
from .em import EMConfig, FitResult, fit_em
from .errors import DataError, NumericalError
from .model import Hyperparams, weighted_log_likelihood

__all__ = ["CvGrid", "CvResult", "make_folds", "cv_score", "select_lambdas"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CvGrid:
    """Candidate penalty values per axis, sorted descending."""

    lambda_alphas: tuple
    lambda_betas: tuple

    def __post_init__(self):
        for name in ("lambda_alphas", "lambda_betas"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise DataError(f"{name} must be nonempty")
            if any(v < 0 for v in vals):
                raise DataError(f"{name} must be nonnegative")
            vals = tuple(sorted(vals, reverse=True))
            object.__setattr__(self, name, vals)

    @classmethod
    def default(cls, size: int = 10, low: float = 1e-4, high: float = 1.0) -> "CvGrid":
        vals = tuple(np.geomspace(high, low, size))
        return cls(vals, vals)

    @property
    def shape(self):
        return len(self.lambda_alphas), len(self.lambda_betas)


@dataclass
class CvResult:
    grid: CvGrid
    scores: np.ndarray        # (|L_alpha|, |L_beta|), mean over folds
    fold_scores: np.ndarray   # (|L_alpha|, |L_beta|, nfolds)
    winner: tuple             # (ia, ib)
    best_lambdas: tuple       # (lambda_alpha, lambda_beta)
    refit: FitResult


def make_folds(T: int, nfolds: int = 5):
    """Every-nfolds-th time position per fold (0-based); folds partition 0..T-1."""
    if T < nfolds:
        raise DataError(f"cannot make {nfolds} folds from {T} time points")
    return [np.arange(o, T, nfolds) for o in range(nfolds)]


def _winner_cell(scores: np.ndarray):
    """Index of the minimal score; ties go to the largest penalty pair.

    The grid axes are sorted descending, so scanning in order and keeping
    the first strict improvement selects the lexicographically largest
    (lambda_alpha, lambda_beta) among minimizers.
    """
    best = None
    for ia in range(scores.shape[0]):
        for ib in range(scores.shape[1]):
            s = scores[ia, ib]
            if np.isfinite(s) and (best is None or s < best[0]):
                best = (s, ia, ib)
    if best is None:
        raise NumericalError("every cross-validation cell failed")
    return best[1], best[2]


def _fold_seed(seed: int, ia: int, ib: int, fold: int) -> int:
    ss = np.random.SeedSequence((seed, ia, ib, fold))
    return int(ss.generate_state(1)[0])


def _scaled_views(X: CovariateSeries, train_idx, test_idx, scale_mode: str,
                  exclude):
    Xtr, Xte = X.subset(train_idx), X.subset(test_idx)
    if scale_mode == "none":
        return Xtr, Xte
    if scale_mode == "fold":
        Xtr, mean, scale = Xtr.standardized(exclude=exclude)
        Xte, _, _ = Xte.standardized(exclude=exclude, mean=mean, scale=scale)
        return Xtr, Xte
    if scale_mode == "global":
        Xall, _, _ = X.standardized(exclude=exclude)
        return Xall.subset(train_idx), Xall.subset(test_idx)
    raise DataError(f"unknown scale_mode {scale_mode!r}")


def _score_one_fold(args):
    (X, Y, K, radius, config, lam_a, lam_b, folds, fold, ia, ib,
     scale_mode, exclude) = args
    T = X.num_times
    test_idx = folds[fold]
    train_idx = np.setdiff1d(np.arange(T), test_idx)
    try:
        Xtr, Xte = _scaled_views(X, train_idx, test_idx, scale_mode, exclude)
        Ytr, Yte = Y.subset(train_idx), Y.subset(test_idx)
        hyper = Hyperparams(lam_a, lam_b, radius)
        fit_config = EMConfig(
            max_iter=config.max_iter, rel_tol=config.rel_tol,
            restarts=config.restarts, seed=_fold_seed(config.seed, ia, ib, fold),
            admm=config.admm, alpha_solver=config.alpha_solver, workers=1,
        )
        result = fit_em(Xtr, Ytr, K, hyper, fit_config)
        return -weighted_log_likelihood(result.params, Xte, Yte)
    except (NumericalError, DataError) as exc:
        log.warning("fold %d at (%g, %g) failed: %s", fold, lam_a, lam_b, exc)
        return float("inf")


def cv_score(lambda_pair, X: CovariateSeries, Y: CytogramSeries, K: int,
             radius: float, config: EMConfig, nfolds: int = 5,
             scale_mode: str = "none", exclude=(), cell=(0, 0)):
    """Mean held-out negative log-likelihood for one penalty pair.

    Returns (score, per-fold scores). Failed folds score +inf.
    """
    lam_a, lam_b = lambda_pair
    folds = make_folds(X.num_times, nfolds)
    per_fold = [
        _score_one_fold((X, Y, K, radius, config, lam_a, lam_b, folds, o,
                         cell[0], cell[1], scale_mode, exclude))
        for o in range(nfolds)
    ]
    return float(np.mean(per_fold)), per_fold


def select_lambdas(grid: CvGrid, X: CovariateSeries, Y: CytogramSeries, K: int,
                   radius: float, config: EMConfig, nfolds: int = 5,
                   scale_mode: str = "none", exclude=(),
                   workers: int | None = None,
                   refit_config: EMConfig | None = None) -> CvResult:
    """Score every grid cell, pick the minimizer, and refit on all data.

    ``scale_mode`` controls covariate standardization: "none" uses X as
    given, "fold" estimates scaling on each training split only (no
    leakage), "global" reproduces whole-series scaling. ``refit_config``
    lets the final all-data fit use a different budget (more restarts)
    than the fold fits.
    """
    Y.check_matches(X)
    if scale_mode not in ("none", "fold", "global"):
        raise DataError(f"unknown scale_mode {scale_mode!r}")
    na, nb = grid.shape
    folds = make_folds(X.num_times, nfolds)
    tasks = []
    for ia, lam_a in enumerate(grid.lambda_alphas):
        for ib, lam_b in enumerate(grid.lambda_betas):
            for o in range(nfolds):
                tasks.append((X, Y, K, radius, config, lam_a, lam_b, folds, o,
                              ia, ib, scale_mode, exclude))
    flat = thread_map(_score_one_fold, tasks, workers=workers)
    fold_scores = np.array(flat).reshape(na, nb, nfolds)
    scores = fold_scores.mean(axis=2)

    ia, ib = _winner_cell(scores)
    lam_a = grid.lambda_alphas[ia]
    lam_b = grid.lambda_betas[ib]
    Xfit = X
    if scale_mode in ("fold", "global"):
        Xfit, _, _ = X.standardized(exclude=exclude)
    refit = fit_em(Xfit, Y, K, Hyperparams(lam_a, lam_b, radius),
                   refit_config if refit_config is not None else config)
    return CvResult(
        grid=grid,
        scores=scores,
        fold_scores=fold_scores,
        winner=(ia, ib),
        best_lambdas=(lam_a, lam_b),
        refit=refit,
    )
