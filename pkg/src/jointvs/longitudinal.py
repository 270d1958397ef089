"""Longitudinal data containers and Gaussian mixed-model likelihood pieces.

A dataset holds one record per subject (event time, cause, covariates and a
ragged series of marker measurements) together with one design spec per
marker.  Marker trajectories are evaluated at exact observation times; no
interpolation is ever applied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .errors import DataError, DimensionError

LOG_2PI = float(np.log(2.0 * np.pi))

TREND_ORDERS = {"linear": 1, "quadratic": 2}


def polynomial_design(times, order: int) -> np.ndarray:
    """Design matrix (1, s, ..., s**order) evaluated at `times`, shape (m, order+1)."""
    t = np.atleast_1d(np.asarray(times, dtype=float))
    return np.vander(t, order + 1, increasing=True)


@dataclass(frozen=True)
class MarkerModelSpec:
    """Design-matrix builders for one longitudinal marker.

    `fixed_design` and `random_design` map an array of times to design
    matrices of shape (m, n_fixed) and (m, n_random).
    """

    name: str
    fixed_design: Callable[[np.ndarray], np.ndarray]
    random_design: Callable[[np.ndarray], np.ndarray]
    n_fixed: int
    n_random: int
    trend: str = "linear"

    @classmethod
    def from_trend(cls, name: str, trend: str = "linear") -> "MarkerModelSpec":
        """Standard polynomial-trend spec with identical fixed and random designs."""
        if trend not in TREND_ORDERS:
            raise DataError(f"unknown trend {trend!r}; expected one of {sorted(TREND_ORDERS)}")
        order = TREND_ORDERS[trend]

        def design(times, _order=order):
            return polynomial_design(times, _order)

        return cls(
            name=name,
            fixed_design=design,
            random_design=design,
            n_fixed=order + 1,
            n_random=order + 1,
            trend=trend,
        )


@dataclass(frozen=True)
class FixedEffects:
    """Fixed-effect coefficients and residual variance for one marker."""

    beta: np.ndarray
    sigma2: float

    def __post_init__(self):
        object.__setattr__(self, "beta", _frozen_array(self.beta))
        if not self.sigma2 > 0:
            raise DataError(f"sigma2 must be positive, got {self.sigma2}")


@dataclass(frozen=True)
class RandomEffectsDraw:
    """Per-marker random-effect vectors for one subject, stacked marker 1..K."""

    by_marker: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "by_marker", tuple(_frozen_array(b) for b in self.by_marker)
        )
        if not all(np.all(np.isfinite(b)) for b in self.by_marker):
            raise DataError("random effects must be finite")

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate(self.by_marker)


def _frozen_array(x) -> np.ndarray:
    arr = np.array(x, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: observed time, cause, covariates and per-marker series.

    `times[k]` / `values[k]` hold marker k's measurement times and values;
    markers with no measurement for this subject have empty arrays.
    """

    id: str
    event_time: float
    cause: int
    covariates: np.ndarray
    times: tuple
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "covariates", _frozen_array(self.covariates))
        object.__setattr__(self, "times", tuple(_frozen_array(t) for t in self.times))
        object.__setattr__(self, "values", tuple(_frozen_array(v) for v in self.values))
        if self.event_time < 0:
            raise DataError(f"subject {self.id}: negative event time {self.event_time}")
        if self.cause < 0:
            raise DataError(f"subject {self.id}: cause must be in 0..L, got {self.cause}")
        for k, (t, v) in enumerate(zip(self.times, self.values)):
            if t.shape != v.shape:
                raise DataError(f"subject {self.id}, marker index {k}: times/values length mismatch")
            if t.size and (t.min() < 0 or t.max() > self.event_time + 1e-9):
                raise DataError(
                    f"subject {self.id}, marker index {k}: measurement times must lie in "
                    f"[0, event_time={self.event_time}]"
                )
            if not np.all(np.isfinite(v)):
                raise DataError(f"subject {self.id}, marker index {k}: non-finite marker value")

    @property
    def n_measurements(self) -> int:
        return int(sum(t.size for t in self.times))


@dataclass(frozen=True)
class LongitudinalDataset:
    """All subjects plus the marker design specs they share."""

    subjects: tuple
    markers: tuple

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "markers", tuple(self.markers))
        if len(self.markers) < 1:
            raise DataError("dataset needs at least one marker")
        ids = [s.id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise DataError("subject identifiers must be unique")
        for s in self.subjects:
            if len(s.times) != len(self.markers):
                raise DataError(
                    f"subject {s.id}: {len(s.times)} marker series but {len(self.markers)} markers"
                )
            if s.n_measurements < 1:
                raise DataError(f"subject {s.id} has no measurements")
        dims = {s.covariates.size for s in self.subjects}
        if len(dims) > 1:
            raise DataError(f"covariate vector length differs across subjects: {sorted(dims)}")

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def n_markers(self) -> int:
        return len(self.markers)

    @property
    def n_covariates(self) -> int:
        return int(self.subjects[0].covariates.size) if self.subjects else 0

    def marker_index(self, name: str) -> int:
        for k, spec in enumerate(self.markers):
            if spec.name == name:
                return k
        raise DataError(f"unknown marker {name!r}")

    def event_times(self) -> np.ndarray:
        return np.array([s.event_time for s in self.subjects])

    def causes(self) -> np.ndarray:
        return np.array([s.cause for s in self.subjects], dtype=int)

    def covariate_matrix(self) -> np.ndarray:
        return np.array([s.covariates for s in self.subjects])

    def marker_arrays(self, k: int):
        """Flat (subject_index, times, values) arrays for marker k.

        Subjects without measurements for marker k contribute no rows.
        """
        idx, times, values = [], [], []
        for i, s in enumerate(self.subjects):
            t = s.times[k]
            if t.size:
                idx.append(np.full(t.size, i, dtype=int))
                times.append(t)
                values.append(s.values[k])
        if not idx:
            return (np.empty(0, dtype=int), np.empty(0), np.empty(0))
        return (np.concatenate(idx), np.concatenate(times), np.concatenate(values))

    def subset(self, indices) -> "LongitudinalDataset":
        return LongitudinalDataset(
            subjects=tuple(self.subjects[i] for i in indices), markers=self.markers
        )


def linear_predictor(spec: MarkerModelSpec, beta, b, s):
    """Mixed-model linear predictor X(s)'beta + Z(s)'b at time(s) `s`.

    Returns a scalar for scalar `s`, else an array matching `s`.
    """
    beta = np.asarray(beta, dtype=float)
    b = np.asarray(b, dtype=float)
    if beta.shape != (spec.n_fixed,):
        raise DimensionError(
            f"marker {spec.name!r}: beta has shape {beta.shape}, expected ({spec.n_fixed},)"
        )
    if b.shape != (spec.n_random,):
        raise DimensionError(
            f"marker {spec.name!r}: random effects have shape {b.shape}, expected ({spec.n_random},)"
        )
    scalar = np.isscalar(s) or np.ndim(s) == 0
    t = np.atleast_1d(np.asarray(s, dtype=float))
    eta = spec.fixed_design(t) @ beta + spec.random_design(t) @ b
    return float(eta[0]) if scalar else eta


def gaussian_loglik(values, means, sigma2: float) -> float:
    """Sum of independent Normal(mean, sigma2) log-densities."""
    if not sigma2 > 0:
        raise DataError(f"sigma2 must be positive, got {sigma2}")
    r = np.asarray(values, dtype=float) - np.asarray(means, dtype=float)
    n = r.size
    return float(-0.5 * n * (LOG_2PI + np.log(sigma2)) - 0.5 * np.dot(r, r) / sigma2)


def longitudinal_loglik(spec: MarkerModelSpec, times, values, beta, sigma2: float, b) -> float:
    """Gaussian log-likelihood of one subject-marker series under (beta, sigma2, b)."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size == 0:
        return 0.0
    eta = linear_predictor(spec, beta, b, times)
    return gaussian_loglik(values, eta, sigma2)


# ---------------------------------------------------------------------------
# CSV interchange.  Long format: id,marker,time,value.  Subject level:
# id,event_time,cause,w1..wp.  UTF-8, "." decimal separator.
# ---------------------------------------------------------------------------

LONG_COLUMNS = ["id", "marker", "time", "value"]
SUBJECT_BASE_COLUMNS = ["id", "event_time", "cause"]


def _check_columns(df: pd.DataFrame, required, path) -> None:
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing required columns {missing}")


def load_dataset(long_path, subject_path, trends=None) -> LongitudinalDataset:
    """Assemble a dataset from the two CSV files.

    `trends` maps marker name to "linear" or "quadratic"; unlisted markers
    default to linear.  Marker order follows first appearance in the long file.
    """
    long_df = pd.read_csv(long_path)
    _check_columns(long_df, LONG_COLUMNS, long_path)
    subj_df = pd.read_csv(subject_path)
    _check_columns(subj_df, SUBJECT_BASE_COLUMNS, subject_path)

    trends = dict(trends or {})
    marker_names = list(dict.fromkeys(long_df["marker"].astype(str)))
    markers = tuple(
        MarkerModelSpec.from_trend(name, trends.get(name, "linear")) for name in marker_names
    )
    cov_cols = [c for c in subj_df.columns if c not in SUBJECT_BASE_COLUMNS]

    long_df = long_df.assign(id=long_df["id"].astype(str))
    grouped = {
        (sid, marker): (g["time"].to_numpy(dtype=float), g["value"].to_numpy(dtype=float))
        for (sid, marker), g in long_df.groupby(["id", "marker"], sort=False)
    }

    subjects = []
    for row in subj_df.itertuples(index=False):
        sid = str(row.id)
        times, values = [], []
        for name in marker_names:
            t, v = grouped.get((sid, name), (np.empty(0), np.empty(0)))
            order = np.argsort(t, kind="stable")
            times.append(t[order])
            values.append(v[order])
        subjects.append(
            SubjectRecord(
                id=sid,
                event_time=float(row.event_time),
                cause=int(row.cause),
                covariates=np.array([getattr(row, c) for c in cov_cols], dtype=float),
                times=tuple(times),
                values=tuple(values),
            )
        )
    return LongitudinalDataset(subjects=tuple(subjects), markers=markers)


def write_dataset(dataset: LongitudinalDataset, long_path, subject_path) -> None:
    """Write the two-CSV representation consumed by `load_dataset`."""
    rows = []
    for s in dataset.subjects:
        for spec, t, v in zip(dataset.markers, s.times, s.values):
            for tj, vj in zip(t, v):
                rows.append((s.id, spec.name, tj, vj))
    pd.DataFrame(rows, columns=LONG_COLUMNS).to_csv(long_path, index=False)

    p = dataset.n_covariates
    cols = SUBJECT_BASE_COLUMNS + [f"w{j + 1}" for j in range(p)]
    rows = [
        (s.id, s.event_time, s.cause, *s.covariates.tolist()) for s in dataset.subjects
    ]
    pd.DataFrame(rows, columns=cols).to_csv(subject_path, index=False)
