"""Command-line interface.

Subcommands: fit, cv, bin, simulate, predict. Heavy commands write their
delimited outputs plus companion PNG figures (disable with --no-figures).
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
FLOWFIT_THREADS caps parallelism.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import io as fio
from .admm import AdmmConfig
from .binning import BinGrid, bin_particles, biomass_multiplicity
from .cv import CvGrid, select_lambdas
from .data import CovariateSeries, CytogramSeries
from .em import EMConfig, fit_em
from .errors import DataError, FlowfitError, NumericalError
from .model import Hyperparams
from .simulate import StudyConfig, run_cluster_misspec_study, run_noisy_covariates_study

log = logging.getLogger("flowfit")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _stem(path: str) -> str:
    root, ext = os.path.splitext(path)
    return root if ext else path


def _align(X: CovariateSeries, Y) -> tuple:
    """Match cytogram time points to covariate rows."""
    cyt = Y.to_cytograms() if hasattr(Y, "to_cytograms") else Y
    if X.times is not None and cyt.times is not None:
        lookup = {int(t): i for i, t in enumerate(X.times)}
        missing = [int(t) for t in cyt.times if int(t) not in lookup]
        if missing:
            raise DataError(
                f"cytogram time points {missing[:5]} not covered by the covariates"
            )
        X = X.subset([lookup[int(t)] for t in cyt.times])
    elif X.num_times != cyt.num_times:
        raise DataError(
            f"{cyt.num_times} cytogram time points vs {X.num_times} covariate rows"
        )
    return X, cyt


def _parse_lags(spec: str):
    pairs = []
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            col, hours = item.split(":")
            pairs.append((col, int(hours)))
        except ValueError:
            raise UsageError(f"--lag entries look like col:hours, got {item!r}") from None
    return pairs


def _parse_grid(spec: str | None, size: int):
    if spec is None:
        return tuple(np.geomspace(1.0, 1e-4, size))
    try:
        values = tuple(float(v) for v in spec.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"penalty grid must be comma-separated numbers, got {spec!r}") from None
    if not values:
        raise UsageError("penalty grid is empty")
    return values


def _load_inputs(args):
    exclude = tuple(c for c in (args.exclude or "").split(",") if c)
    X = fio.load_covariates(args.covariates, standardize=args.standardize,
                            exclude=exclude)
    if args.lag:
        X = fio.derive_lags(X, _parse_lags(args.lag))
    Y = fio.load_cytograms(args.cytograms, fmt=args.format, grid_path=args.grid)
    return _align(X, Y)


def _add_data_flags(p):
    p.add_argument("--covariates", required=True, help="covariate CSV (time, cols...)")
    p.add_argument("--cytograms", required=True, help="cytogram CSV")
    p.add_argument("--format", choices=["particles", "binned"], default="particles")
    p.add_argument("--grid", help="grid sidecar JSON for binned input")
    p.add_argument("--standardize", action="store_true",
                   help="center/scale covariates (sample sd 1)")
    p.add_argument("--exclude", help="comma-separated indicator columns left unscaled")
    p.add_argument("--lag", help="derive lagged covariates, e.g. par:3,par:6")


def _add_fit_flags(p):
    p.add_argument("--k", type=int, required=True, help="number of clusters")
    p.add_argument("--radius", type=float, required=True,
                   help="ball-constraint radius for mean deviations")
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--rel-tol", type=float, default=1e-6)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True, help="output model JSON path")


def build_parser() -> Parser:
    parser = Parser(prog="flowfit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model at fixed penalties")
    _add_data_flags(p)
    _add_fit_flags(p)
    p.add_argument("--lambda-alpha", type=float, required=True)
    p.add_argument("--lambda-beta", type=float, required=True)
    p.add_argument("--trace-out", help="optional CSV of the objective trace")

    p = sub.add_parser("cv", help="cross-validate penalties, then fit")
    _add_data_flags(p)
    _add_fit_flags(p)
    p.add_argument("--grid-alpha", help="comma-separated lambda_alpha values")
    p.add_argument("--grid-beta", help="comma-separated lambda_beta values")
    p.add_argument("--grid-size", type=int, default=10,
                   help="log-spaced grid size when values are not given")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--scale-mode", choices=["none", "fold", "global"],
                   default="none", help="covariate scaling inside CV")

    p = sub.add_parser("bin", help="coarsen particles onto a lattice")
    p.add_argument("--cytograms", required=True)
    p.add_argument("--d-per-axis", type=int, required=True, help="bins per axis")
    p.add_argument("--mode", choices=["counts", "weights"], default="counts")
    p.add_argument("--biomass-axis", type=int,
                   help="1-based axis whose diameter cubed becomes the multiplicity")
    p.add_argument("--log-scale", action="store_true",
                   help="biomass axis holds log diameters")
    p.add_argument("--tolerant", action="store_true",
                   help="skip out-of-domain particles instead of failing")
    p.add_argument("--out", required=True, help="output binned CSV path")

    p = sub.add_parser("simulate", help="run a synthetic benchmark study")
    p.add_argument("--study", choices=["noisy", "misspec"], required=True)
    p.add_argument("--sigma-add", default="0,0.9,1.8,2.7",
                   help="noise levels for the noisy study")
    p.add_argument("--k-values", default="1,2,3,4,5",
                   help="cluster counts for the misspec study")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--quick", action="store_true", help="smaller grids/restarts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("predict", help="tabulate probabilities and means")
    p.add_argument("--model", required=True)
    p.add_argument("--covariates", required=True)
    p.add_argument("--lag", help="derive lagged covariates, e.g. par:3,par:6")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--exclude", help="indicator columns left unscaled")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True, help="output CSV path")
    return parser


def _em_config(args) -> EMConfig:
    return EMConfig(
        max_iter=args.max_iter,
        rel_tol=args.rel_tol,
        restarts=args.restarts,
        seed=args.seed,
        admm=AdmmConfig(),
    )


def cmd_fit(args) -> int:
    X, Y = _load_inputs(args)
    hyper = Hyperparams(args.lambda_alpha, args.lambda_beta, args.radius)
    result = fit_em(X, Y, args.k, hyper, _em_config(args))
    doc = fio.ModelDocument.from_fit(result, hyper, X.names, args.seed, args.restarts)
    fio.save_model(args.out, doc)
    if args.trace_out:
        rows = [{"iteration": i + 1, "objective": float(v)}
                for i, v in enumerate(result.objective_trace)]
        fio.write_csv(args.trace_out, rows)
    if not args.no_figures:
        from .plots import save_trace_figure
        save_trace_figure(result.objective_trace, _stem(args.out) + "_trace.png")
    print(f"fit: objective {result.final_objective:.6g} "
          f"(restart {result.winner_restart}, converged={result.converged})")
    return 0


def cmd_cv(args) -> int:
    X, Y = _load_inputs(args)
    grid = CvGrid(
        _parse_grid(args.grid_alpha, args.grid_size),
        _parse_grid(args.grid_beta, args.grid_size),
    )
    exclude = tuple(c for c in (args.exclude or "").split(",") if c)
    cvres = select_lambdas(
        grid, X, Y, args.k, args.radius, _em_config(args),
        nfolds=args.folds, scale_mode=args.scale_mode, exclude=exclude,
    )
    hyper = Hyperparams(*cvres.best_lambdas, args.radius)
    doc = fio.ModelDocument.from_fit(cvres.refit, hyper, X.names, args.seed,
                                     args.restarts)
    doc.metadata["cv_scores"] = [[None if not np.isfinite(v) else float(v) for v in row]
                                 for row in cvres.scores]
    doc.metadata["cv_winner"] = list(cvres.winner)
    fio.save_model(args.out, doc)

    score_rows = []
    for ia, la in enumerate(grid.lambda_alphas):
        for ib, lb in enumerate(grid.lambda_betas):
            score_rows.append({
                "lambda_alpha": la, "lambda_beta": lb,
                "score": float(cvres.scores[ia, ib]),
                "winner": (ia, ib) == cvres.winner,
            })
    fio.write_csv(_stem(args.out) + "_cv_scores.csv", score_rows)
    if not args.no_figures:
        from .plots import save_cv_heatmap
        save_cv_heatmap(cvres.scores, grid.lambda_alphas, grid.lambda_betas,
                        cvres.winner, _stem(args.out) + "_cv_scores.png")
    print(f"cv: chose lambda_alpha={cvres.best_lambdas[0]:.4g} "
          f"lambda_beta={cvres.best_lambdas[1]:.4g} "
          f"score={cvres.scores[cvres.winner]:.6g}")
    return 0


def cmd_bin(args) -> int:
    Y = fio.load_cytograms(args.cytograms, fmt="particles")
    if args.biomass_axis is not None:
        axis = args.biomass_axis - 1
        if not 0 <= axis < Y.dim:
            raise DataError(f"--biomass-axis {args.biomass_axis} outside 1..{Y.dim}")
        weights = tuple(
            biomass_multiplicity(y, axis, log_scale=args.log_scale) for y in Y.coords
        )
        Y = CytogramSeries(Y.coords, weights, Y.times)
        mode = "weights"
    else:
        mode = args.mode
    grid = BinGrid.from_data(Y, args.d_per_axis)
    binned = bin_particles(Y, grid, mode=mode, strict=not args.tolerant)
    fio.save_binned(args.out, binned)
    nonzero = sum(len(b) for b in binned.bins)
    print(f"bin: {binned.num_times} time points, {nonzero} nonzero bins "
          f"of {grid.total_bins}, total multiplicity {binned.total_weight:.6g}")
    return 0


def cmd_simulate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    config = StudyConfig(seed=args.seed, quick=args.quick, radius=args.radius)
    if args.study == "noisy":
        sigmas = [float(s) for s in args.sigma_add.split(",") if s.strip()]
        rows, summary = run_noisy_covariates_study(sigmas, args.reps, config)
        prefix = os.path.join(args.out, "noisy")
        if not args.no_figures:
            from .plots import save_noisy_study_figure
            save_noisy_study_figure(summary, prefix + "_study.png")
    else:
        k_values = [int(k) for k in args.k_values.split(",") if k.strip()]
        rows, summary = run_cluster_misspec_study(k_values, args.reps, config)
        prefix = os.path.join(args.out, "misspec")
        if not args.no_figures:
            from .plots import save_misspec_study_figure
            save_misspec_study_figure(summary, prefix + "_study.png")
    all_fields = sorted({k for r in rows for k in r}, key=lambda k: k)
    fio.write_csv(prefix + "_reps.csv", rows, fieldnames=all_fields)
    sum_fields = sorted({k for r in summary for k in r}, key=lambda k: k)
    fio.write_csv(prefix + "_summary.csv", summary, fieldnames=sum_fields)
    for entry in summary:
        print(entry)
    return 0


def cmd_predict(args) -> int:
    doc = fio.load_model(args.model)
    exclude = tuple(c for c in (args.exclude or "").split(",") if c)
    X = fio.load_covariates(args.covariates, standardize=args.standardize,
                            exclude=exclude)
    if args.lag:
        X = fio.derive_lags(X, _parse_lags(args.lag))
    rows = fio.predict_table(doc, X)
    fio.write_csv(args.out, rows)
    if not args.no_figures:
        from .plots import save_prediction_figure
        save_prediction_figure(rows, doc.params.dim, doc.params.num_clusters,
                               _stem(args.out) + ".png")
    print(f"predict: wrote {len(rows)} rows for {doc.params.num_clusters} clusters")
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "cv": cmd_cv,
    "bin": cmd_bin,
    "simulate": cmd_simulate,
    "predict": cmd_predict,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except FlowfitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
