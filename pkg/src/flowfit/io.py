"""File contracts: CSV ingestion, JSON model documents, prediction tables.

Covariates: CSV with a header, first column ``time`` (integers), remaining
columns one covariate each.

Cytograms, particles format: CSV with columns ``time, y1..yd`` and an
optional trailing ``multiplicity`` column (default 1).

Cytograms, binned format: CSV with columns ``time, bin_index,
multiplicity`` plus a JSON sidecar (``<path>.grid.json`` by default)
describing the lattice: per-axis ``lower``, ``upper``, ``num_bins``.

Models: a JSON document with full-precision floats; round-trips are
lossless at double precision.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .binning import BinGrid, BinnedCytogramSeries
from .data import CovariateSeries, CytogramSeries
from .em import FitResult
from .errors import DataError, NumericalError
from .model import (
    Hyperparams,
    ModelParams,
    cluster_means_series,
    log_mixture_weights,
)

__all__ = [
    "ModelDocument",
    "load_covariates",
    "load_cytograms",
    "save_binned",
    "save_model",
    "load_model",
    "predict_table",
    "write_csv",
    "derive_lags",
]

SCHEMA_VERSION = 1


def _parse_float(cell: str, line: int, column: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise DataError(
            f"line {line}: column {column!r} has non-numeric value {cell!r}"
        ) from None


def _read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: line {line_no}: expected {len(header)} cells, got {len(row)}"
                )
            rows.append((line_no, [c.strip() for c in row]))
    return header, rows


def load_covariates(path, standardize: bool = False, exclude=()) -> CovariateSeries:
    """Read a covariate CSV; optionally standardize non-indicator columns."""
    header, rows = _read_rows(path)
    if not header or header[0] != "time":
        raise DataError(f"{path}: first column must be 'time', got {header[:1]}")
    names = header[1:]
    if not names:
        raise DataError(f"{path}: no covariate columns")
    times, values, seen = [], [], {}
    for line_no, row in rows:
        t = _parse_float(row[0], line_no, "time")
        if not float(t).is_integer():
            raise DataError(f"{path}: line {line_no}: time {row[0]!r} is not an integer")
        t = int(t)
        if t in seen:
            raise DataError(
                f"{path}: line {line_no}: duplicate time index {t} (first at line {seen[t]})"
            )
        seen[t] = line_no
        times.append(t)
        values.append([_parse_float(c, line_no, n) for n, c in zip(names, row[1:])])
    order = np.argsort(times)
    series = CovariateSeries(
        np.asarray(values, dtype=float)[order],
        tuple(names),
        np.asarray(times, dtype=float)[order],
    )
    if standardize:
        series, _, _ = series.standardized(exclude=exclude)
    return series


def load_cytograms(path, fmt: str = "particles", grid_path=None):
    """Read cytograms; returns CytogramSeries or BinnedCytogramSeries."""
    if fmt == "particles":
        return _load_particles(path)
    if fmt == "binned":
        return _load_binned(path, grid_path)
    raise DataError(f"unknown cytogram format {fmt!r}")


def _load_particles(path) -> CytogramSeries:
    header, rows = _read_rows(path)
    if not header or header[0] != "time":
        raise DataError(f"{path}: first column must be 'time'")
    has_mult = header[-1] == "multiplicity"
    axis_names = header[1:-1] if has_mult else header[1:]
    if not axis_names:
        raise DataError(f"{path}: no coordinate columns")
    by_time: dict = {}
    for line_no, row in rows:
        t = int(_parse_float(row[0], line_no, "time"))
        coords = [_parse_float(c, line_no, n) for n, c in zip(axis_names, row[1:])]
        if has_mult:
            mult = _parse_float(row[-1], line_no, "multiplicity")
            if mult <= 0:
                raise DataError(f"{path}: line {line_no}: multiplicity must be positive")
        else:
            mult = 1.0
        by_time.setdefault(t, ([], []))
        by_time[t][0].append(coords)
        by_time[t][1].append(mult)
    times = sorted(by_time)
    return CytogramSeries(
        tuple(np.asarray(by_time[t][0], dtype=float) for t in times),
        tuple(np.asarray(by_time[t][1], dtype=float) for t in times),
        np.asarray(times, dtype=float),
    )


def _default_grid_path(path) -> str:
    return f"{path}.grid.json"


def _load_binned(path, grid_path=None) -> BinnedCytogramSeries:
    grid_path = grid_path or _default_grid_path(path)
    try:
        with open(grid_path) as fh:
            grid = BinGrid.from_dict(json.load(fh))
    except FileNotFoundError:
        raise DataError(f"grid descriptor not found at {grid_path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{grid_path}: invalid JSON ({exc})") from None
    header, rows = _read_rows(path)
    if header != ["time", "bin_index", "multiplicity"]:
        raise DataError(
            f"{path}: binned format requires columns time,bin_index,multiplicity"
        )
    B = grid.total_bins
    by_time: dict = {}
    for line_no, row in rows:
        t = int(_parse_float(row[0], line_no, "time"))
        b = int(_parse_float(row[1], line_no, "bin_index"))
        c = _parse_float(row[2], line_no, "multiplicity")
        if not 0 <= b < B:
            raise DataError(f"{path}: line {line_no}: bin index {b} out of range (B={B})")
        if c <= 0:
            raise DataError(f"{path}: line {line_no}: multiplicity must be positive")
        by_time.setdefault(t, ([], []))
        by_time[t][0].append(b)
        by_time[t][1].append(c)
    times = sorted(by_time)
    return BinnedCytogramSeries(
        grid,
        tuple(np.asarray(by_time[t][0], dtype=int) for t in times),
        tuple(np.asarray(by_time[t][1], dtype=float) for t in times),
        np.asarray(times, dtype=float),
    )


def save_binned(path, binned: BinnedCytogramSeries, grid_path=None) -> None:
    """Write a binned series as CSV plus its grid sidecar."""
    grid_path = grid_path or _default_grid_path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "bin_index", "multiplicity"])
        for t in range(binned.num_times):
            label = int(binned.times[t]) if binned.times is not None else t + 1
            for b, c in zip(binned.bins[t], binned.weights[t]):
                writer.writerow([label, int(b), repr(float(c))])
    with open(grid_path, "w") as fh:
        json.dump(binned.grid.to_dict(), fh, indent=2)


# ---------------------------------------------------------------------------
# Model documents
# ---------------------------------------------------------------------------

@dataclass
class ModelDocument:
    """Serializable fitted model: parameters, penalties, fit metadata."""

    params: ModelParams
    hyper: Hyperparams
    covariate_names: tuple
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_fit(cls, result: FitResult, hyper: Hyperparams, covariate_names,
                 seed: int, restarts: int) -> "ModelDocument":
        meta = {
            "seed": seed,
            "restarts": restarts,
            "winner_restart": result.winner_restart,
            "converged": result.converged,
            "final_objective": float(result.final_objective),
            "objective_trace": [float(v) for v in result.objective_trace],
            "restart_objectives": [
                None if not np.isfinite(v) else float(v)
                for v in result.restart_objectives
            ],
        }
        return cls(result.params, hyper, tuple(covariate_names), meta)

    def to_dict(self) -> dict:
        p = self.params
        return {
            "schema_version": SCHEMA_VERSION,
            "num_clusters": p.num_clusters,
            "num_covariates": p.num_covariates,
            "dim": p.dim,
            "covariate_names": list(self.covariate_names),
            "alpha0": p.alpha0.tolist(),
            "alpha": p.alpha.tolist(),
            "beta0": p.beta0.tolist(),
            "beta": p.beta.tolist(),
            "sigma": p.sigma.tolist(),
            "lambda_alpha": self.hyper.lambda_alpha,
            "lambda_beta": self.hyper.lambda_beta,
            "radius": self.hyper.radius,
            "metadata": self.metadata,
        }


def save_model(path, doc: ModelDocument) -> None:
    with open(path, "w") as fh:
        json.dump(doc.to_dict(), fh, indent=2)


def load_model(path) -> ModelDocument:
    """Read and validate a model document; rejects tampered covariances."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported schema version {version!r}")
    required = [
        "num_clusters", "num_covariates", "dim", "covariate_names",
        "alpha0", "alpha", "beta0", "beta", "sigma",
        "lambda_alpha", "lambda_beta", "radius",
    ]
    for name in required:
        if name not in raw:
            raise DataError(f"{path}: missing field {name!r}")
    params = ModelParams(
        alpha0=np.asarray(raw["alpha0"], dtype=float),
        alpha=np.asarray(raw["alpha"], dtype=float),
        beta0=np.asarray(raw["beta0"], dtype=float),
        beta=np.asarray(raw["beta"], dtype=float),
        sigma=np.asarray(raw["sigma"], dtype=float),
    )
    expected = (raw["num_clusters"], raw["num_covariates"], raw["dim"])
    actual = (params.num_clusters, params.num_covariates, params.dim)
    if expected != actual:
        raise DataError(f"{path}: declared shape {expected} but arrays give {actual}")
    if len(raw["covariate_names"]) != params.num_covariates:
        raise DataError(f"{path}: covariate_names length mismatch")
    try:
        params.validate()
    except (DataError, NumericalError) as exc:
        raise DataError(f"{path}: invalid parameters: {exc}") from None
    hyper = Hyperparams(raw["lambda_alpha"], raw["lambda_beta"], raw["radius"])
    return ModelDocument(params, hyper, tuple(raw["covariate_names"]),
                         raw.get("metadata", {}))


# ---------------------------------------------------------------------------
# Prediction tables
# ---------------------------------------------------------------------------

def predict_table(doc: ModelDocument, X: CovariateSeries):
    """Long-format rows: per (time, cluster), the mixture probability, the
    mean per axis, and a +-2 standard deviation band per axis."""
    if X.names != doc.covariate_names:
        raise DataError(
            f"covariate names {list(X.names)} do not match the model's "
            f"{list(doc.covariate_names)}"
        )
    params = doc.params
    probs = np.exp(log_mixture_weights(params, X.values))
    means = cluster_means_series(params, X.values)
    bands = 2.0 * np.sqrt(np.stack([np.diag(S) for S in params.sigma]))
    rows = []
    for t in range(X.num_times):
        label = int(X.times[t]) if X.times is not None else t + 1
        for k in range(params.num_clusters):
            row = {"time": label, "cluster": k + 1,
                   "probability": float(probs[t, k])}
            for a in range(params.dim):
                row[f"mean_y{a + 1}"] = float(means[t, k, a])
                row[f"lo_y{a + 1}"] = float(means[t, k, a] - bands[k, a])
                row[f"hi_y{a + 1}"] = float(means[t, k, a] + bands[k, a])
            rows.append(row)
    return rows


def write_csv(path, rows, fieldnames=None) -> None:
    """Write dict rows as CSV; floats carry full precision."""
    if not rows:
        with open(path, "w", newline="") as fh:
            fh.write("")
        return
    if fieldnames is None:
        fieldnames = list(rows[0].keys())

    def fmt(v):
        if isinstance(v, bool):
            return int(v)
        if isinstance(v, float):
            return repr(v)
        return v

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: fmt(v) for k, v in row.items()})


def derive_lags(X: CovariateSeries, lag_spec) -> CovariateSeries:
    """Append lagged copies of covariates and drop the first max-lag rows.

    ``lag_spec`` is a list of (column, hours) pairs; the lagged column is
    named ``<column>_lag<hours>``.
    """
    if not lag_spec:
        return X
    max_lag = 0
    extra_names, extra_cols = [], []
    for col, hours in lag_spec:
        if col not in X.names:
            raise DataError(f"unknown covariate {col!r} in lag specification")
        hours = int(hours)
        if hours < 1:
            raise DataError("lag hours must be positive")
        j = X.names.index(col)
        shifted = np.roll(X.values[:, j], hours)
        extra_names.append(f"{col}_lag{hours}")
        extra_cols.append(shifted)
        max_lag = max(max_lag, hours)
    if max_lag >= X.num_times:
        raise DataError("lag exceeds the series length")
    values = np.column_stack([X.values] + extra_cols)[max_lag:]
    times = None if X.times is None else X.times[max_lag:]
    return CovariateSeries(values, X.names + tuple(extra_names), times)
