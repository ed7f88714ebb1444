"""Immutable containers for covariate and cytogram time series.

A dataset is a pair: a ``CovariateSeries`` holding the T x p design matrix
(one row of environmental covariates per time point) and a
``CytogramSeries`` holding, for each time point, the particle coordinates
in optical space together with positive multiplicities (repeat counts or
biomass weights). Both are frozen after construction; every solver in the
package treats them as read-only.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DataError

__all__ = ["CovariateSeries", "CytogramSeries"]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CovariateSeries:
    """T x p design matrix plus covariate names and optional time labels."""

    values: np.ndarray
    names: tuple[str, ...]
    times: np.ndarray | None = None

    def __post_init__(self):
        values = _freeze(self.values)
        if values.ndim != 2:
            raise DataError("covariate values must be a 2-d array (T x p)")
        if not np.all(np.isfinite(values)):
            raise DataError("covariate values contain non-finite entries")
        names = tuple(str(n) for n in self.names)
        if len(names) != values.shape[1]:
            raise DataError(
                f"{len(names)} covariate names for {values.shape[1]} columns"
            )
        if len(set(names)) != len(names):
            raise DataError("covariate names are not unique")
        times = self.times
        if times is not None:
            times = _freeze(times)
            if times.shape != (values.shape[0],):
                raise DataError("times must have one entry per row")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "times", times)

    @property
    def num_times(self) -> int:
        return self.values.shape[0]

    @property
    def num_covariates(self) -> int:
        return self.values.shape[1]

    def subset(self, time_indices) -> "CovariateSeries":
        """New series restricted to the given time positions (0-based)."""
        idx = np.asarray(time_indices, dtype=int)
        times = None if self.times is None else self.times[idx]
        return CovariateSeries(self.values[idx], self.names, times)

    def standardized(self, exclude=(), mean=None, scale=None):
        """Center/scale columns to mean 0, sample sd 1.

        Columns listed in ``exclude`` (indicator variables) pass through
        unchanged. When ``mean``/``scale`` are given they are applied as-is,
        which lets callers reuse statistics estimated on a training subset.
        Returns ``(series, mean, scale)``.
        """
        exclude = set(exclude)
        unknown = exclude - set(self.names)
        if unknown:
            raise DataError(f"unknown columns in exclusion list: {sorted(unknown)}")
        values = self.values.copy()
        if mean is None:
            mean = values.mean(axis=0)
            scale = values.std(axis=0, ddof=1) if values.shape[0] > 1 else np.ones_like(mean)
            for j, name in enumerate(self.names):
                if name in exclude:
                    mean[j], scale[j] = 0.0, 1.0
                elif scale[j] == 0.0:
                    raise DataError(f"column {name!r} has zero variance; cannot standardize")
        values = (values - mean) / scale
        return CovariateSeries(values, self.names, self.times), mean, scale


@dataclass(frozen=True)
class CytogramSeries:
    """Per-time particle coordinates with positive multiplicities.

    ``coords[t]`` is an (n_t, d) array and ``weights[t]`` the matching
    (n_t,) multiplicities. Zero-weight rows are dropped at construction;
    negative weights are rejected.
    """

    coords: tuple
    weights: tuple
    times: np.ndarray | None = None

    def __post_init__(self):
        coords, weights = [], []
        for t, (y, c) in enumerate(zip(self.coords, self.weights)):
            y = np.atleast_2d(np.asarray(y, dtype=float))
            c = np.atleast_1d(np.asarray(c, dtype=float))
            if y.shape[0] != c.shape[0]:
                raise DataError(f"time {t}: {y.shape[0]} particles but {c.shape[0]} weights")
            if not np.all(np.isfinite(y)):
                raise DataError(f"time {t}: non-finite particle coordinates")
            if not np.all(np.isfinite(c)):
                raise DataError(f"time {t}: non-finite multiplicities")
            if np.any(c < 0):
                raise DataError(f"time {t}: negative multiplicity")
            keep = c > 0
            coords.append(_freeze(y[keep]))
            weights.append(_freeze(c[keep]))
        if len(coords) == 0:
            raise DataError("cytogram series has no time points")
        d = coords[0].shape[1]
        if any(y.shape[1] != d for y in coords):
            raise DataError("inconsistent particle dimension across time points")
        times = self.times
        if times is not None:
            times = _freeze(times)
            if times.shape != (len(coords),):
                raise DataError("times must have one entry per time point")
        object.__setattr__(self, "coords", tuple(coords))
        object.__setattr__(self, "weights", tuple(weights))
        object.__setattr__(self, "times", times)
        if self.total_weight <= 0:
            raise DataError("total multiplicity must be positive")

    @property
    def num_times(self) -> int:
        return len(self.coords)

    @property
    def dim(self) -> int:
        return self.coords[0].shape[1]

    @cached_property
    def total_weight(self) -> float:
        """Overall multiplicity N (cached; the objective scale)."""
        return float(sum(c.sum() for c in self.weights))

    @cached_property
    def counts(self) -> np.ndarray:
        return np.array([y.shape[0] for y in self.coords])

    @cached_property
    def flat(self):
        """(all_coords, all_weights, time_index) stacked over time points."""
        yall = np.concatenate(self.coords, axis=0)
        wall = np.concatenate(self.weights)
        tidx = np.repeat(np.arange(self.num_times), self.counts)
        return yall, wall, tidx

    @cached_property
    def axis_min(self) -> np.ndarray:
        return np.min(self.flat[0], axis=0)

    @cached_property
    def axis_max(self) -> np.ndarray:
        return np.max(self.flat[0], axis=0)

    @property
    def axis_range(self) -> np.ndarray:
        return self.axis_max - self.axis_min

    def subset(self, time_indices) -> "CytogramSeries":
        idx = np.asarray(time_indices, dtype=int)
        times = None if self.times is None else self.times[idx]
        return CytogramSeries(
            tuple(self.coords[i] for i in idx),
            tuple(self.weights[i] for i in idx),
            times,
        )

    def check_matches(self, X: CovariateSeries) -> None:
        if self.num_times != X.num_times:
            raise DataError(
                f"cytogram series has {self.num_times} time points, "
                f"covariates have {X.num_times}"
            )
