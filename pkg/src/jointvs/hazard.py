"""Cause-specific proportional hazards with piecewise-constant baselines.

Baseline intervals are left-open, right-closed: t in (knot[k-1], knot[k]]
belongs to interval k-1 (0-based), with t=0 assigned to the first interval.
Cumulative hazards integrate the hazard with fixed-node Gauss-Legendre
quadrature per baseline segment, so discontinuities never fall inside a
quadrature panel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .longitudinal import SubjectRecord

DEFAULT_QUAD_NODES = 15


@dataclass(frozen=True)
class PiecewiseBaseline:
    """Knots (first always 0) and per-cause interval heights, shape (L, n_intervals)."""

    knots: np.ndarray
    heights: np.ndarray

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)
        heights = np.atleast_2d(np.array(self.heights, dtype=float))
        knots.flags.writeable = False
        heights.flags.writeable = False
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "heights", heights)
        if knots.ndim != 1 or knots.size < 2:
            raise DataError("baseline needs at least two knots")
        if knots[0] != 0.0:
            raise DataError(f"first knot must be 0, got {knots[0]}")
        if np.any(np.diff(knots) <= 0):
            raise DataError("knots must be strictly increasing")
        if heights.shape[1] != knots.size - 1:
            raise DataError(
                f"heights have {heights.shape[1]} intervals but knots define {knots.size - 1}"
            )
        if np.any(heights <= 0):
            raise DataError("baseline heights must be strictly positive")

    @property
    def n_intervals(self) -> int:
        return self.knots.size - 1

    @property
    def n_causes(self) -> int:
        return self.heights.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.knots[-1])

    def with_heights(self, heights) -> "PiecewiseBaseline":
        return PiecewiseBaseline(knots=self.knots, heights=heights)


def interval_index(knots: np.ndarray, t) -> np.ndarray:
    """0-based interval index of time(s) `t` under right-closed intervals."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > knots[-1] + 1e-12):
        raise DataError(
            f"time outside baseline range [0, {knots[-1]}]: {t_arr[(t_arr < 0) | (t_arr > knots[-1] + 1e-12)]}"
        )
    idx = np.searchsorted(knots, np.minimum(t_arr, knots[-1]), side="left") - 1
    return np.clip(idx, 0, knots.size - 2)


def baseline_at(baseline: PiecewiseBaseline, cause: int, t):
    """Baseline hazard height of `cause` at time(s) `t`."""
    idx = interval_index(baseline.knots, t)
    out = baseline.heights[cause, idx]
    return float(out) if np.ndim(t) == 0 else out


class TrajectoryProvider:
    """Per-subject, per-marker predicted trajectories t -> eta_ik(t)."""

    n_subjects: int
    n_markers: int

    def values(self, i: int, k: int, times) -> np.ndarray:
        raise NotImplementedError

    def values_all(self, times) -> np.ndarray:
        """Trajectories for all subjects/markers at `times`: shape (N, len(times), K)."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.empty((self.n_subjects, times.size, self.n_markers))
        for i in range(self.n_subjects):
            for k in range(self.n_markers):
                out[i, :, k] = self.values(i, k, times)
        return out

    def values_at_nodes(self, nodes: np.ndarray) -> np.ndarray:
        """Trajectories at per-subject node grids, `nodes` (N, R) -> (N, R, K)."""
        n, r = nodes.shape
        out = np.empty((n, r, self.n_markers))
        for i in range(n):
            for k in range(self.n_markers):
                out[i, :, k] = self.values(i, k, nodes[i])
        return out

    def values_at_own_times(self, times: np.ndarray) -> np.ndarray:
        """Trajectories at one per-subject time each, `times` (N,) -> (N, K)."""
        n = times.size
        out = np.empty((n, self.n_markers))
        for i in range(n):
            for k in range(self.n_markers):
                out[i, k] = self.values(i, k, np.array([times[i]]))[0]
        return out


class PolynomialTrajectories(TrajectoryProvider):
    """Trajectories that are polynomials in time, coeffs shape (N, K, degree+1)."""

    def __init__(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.ndim != 3:
            raise DataError(f"polynomial coefficients must be 3-d, got shape {coeffs.shape}")
        self.coeffs = coeffs
        self.n_subjects, self.n_markers, self.degree_plus_1 = coeffs.shape

    def values(self, i, k, times):
        times = np.atleast_1d(np.asarray(times, dtype=float))
        powers = np.vander(times, self.degree_plus_1, increasing=True)
        return powers @ self.coeffs[i, k]

    def values_all(self, times):
        times = np.atleast_1d(np.asarray(times, dtype=float))
        powers = np.vander(times, self.degree_plus_1, increasing=True)
        return np.einsum("md,ikd->imk", powers, self.coeffs)

    def values_at_nodes(self, nodes):
        powers = np.stack([nodes**d for d in range(self.degree_plus_1)], axis=-1)
        return np.einsum("nrd,nkd->nrk", powers, self.coeffs)

    def values_at_own_times(self, times):
        powers = np.vander(np.asarray(times, dtype=float), self.degree_plus_1, increasing=True)
        return np.einsum("nd,nkd->nk", powers, self.coeffs)


class CallableTrajectories(TrajectoryProvider):
    """Adapter over a callable f(i, k, times) -> values."""

    def __init__(self, func, n_subjects: int, n_markers: int):
        self._func = func
        self.n_subjects = n_subjects
        self.n_markers = n_markers

    def values(self, i, k, times):
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return np.asarray(self._func(i, k, times), dtype=float)


@dataclass(frozen=True)
class HazardParams:
    """Per-cause covariate coefficients, association coefficients and baseline."""

    gammas: np.ndarray  # (L, p_gamma)
    alphas: np.ndarray  # (L, K)
    baseline: PiecewiseBaseline

    def __post_init__(self):
        gammas = np.atleast_2d(np.array(self.gammas, dtype=float))
        alphas = np.atleast_2d(np.array(self.alphas, dtype=float))
        gammas.flags.writeable = False
        alphas.flags.writeable = False
        object.__setattr__(self, "gammas", gammas)
        object.__setattr__(self, "alphas", alphas)
        if self.baseline.n_causes != gammas.shape[0] or gammas.shape[0] != alphas.shape[0]:
            raise DataError(
                f"inconsistent cause counts: baseline {self.baseline.n_causes}, "
                f"gammas {gammas.shape[0]}, alphas {alphas.shape[0]}"
            )

    @property
    def n_causes(self) -> int:
        return self.gammas.shape[0]

    @property
    def n_markers(self) -> int:
        return self.alphas.shape[1]


def log_cause_hazard(params: HazardParams, traj: TrajectoryProvider, i: int, l: int, t, omega):
    """log lambda_l(t) for subject i; `t` scalar or array."""
    scalar = np.ndim(t) == 0
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    idx = interval_index(params.baseline.knots, t_arr)
    expo = float(params.gammas[l] @ np.asarray(omega, dtype=float))
    for k in range(params.n_markers):
        a = params.alphas[l, k]
        if a != 0.0:
            expo = expo + a * traj.values(i, k, t_arr)
    out = np.log(params.baseline.heights[l, idx]) + expo
    return float(out[0]) if scalar else out


def cause_hazard(params: HazardParams, traj: TrajectoryProvider, i: int, l: int, t, omega):
    """Cause-specific hazard lambda_l(t) for subject i."""
    return np.exp(log_cause_hazard(params, traj, i, l, t, omega))


def segment_panels(knots: np.ndarray, t: float, n_nodes: int = DEFAULT_QUAD_NODES):
    """Gauss-Legendre nodes/weights/interval indices covering [0, t] split at knots."""
    if t < 0:
        raise DataError(f"integration endpoint must be nonnegative, got {t}")
    if t > knots[-1] + 1e-12:
        raise DataError(f"integration endpoint {t} exceeds last knot {knots[-1]}")
    ref_x, ref_w = np.polynomial.legendre.leggauss(n_nodes)
    times, weights, intervals = [], [], []
    for k in range(knots.size - 1):
        lo = knots[k]
        if lo >= t:
            break
        hi = min(knots[k + 1], t)
        half = 0.5 * (hi - lo)
        times.append(lo + half * (ref_x + 1.0))
        weights.append(half * ref_w)
        intervals.append(np.full(n_nodes, k, dtype=int))
    if not times:
        return (np.empty(0), np.empty(0), np.empty(0, dtype=int))
    return (np.concatenate(times), np.concatenate(weights), np.concatenate(intervals))


def cumulative_hazard(
    params: HazardParams,
    traj: TrajectoryProvider,
    i: int,
    l: int,
    t: float,
    omega,
    n_nodes: int = DEFAULT_QUAD_NODES,
) -> float:
    """Lambda_l(t) = integral of the cause hazard over [0, t] by segment quadrature."""
    times, weights, intervals = segment_panels(params.baseline.knots, t, n_nodes)
    if times.size == 0:
        return 0.0
    expo = float(params.gammas[l] @ np.asarray(omega, dtype=float))
    expo = expo + _association_exponent(params, traj, i, l, times)
    return float(np.sum(weights * params.baseline.heights[l, intervals] * np.exp(expo)))


def _association_exponent(params, traj, i, l, times):
    out = np.zeros(times.size)
    for k in range(params.n_markers):
        a = params.alphas[l, k]
        if a != 0.0:
            out += a * traj.values(i, k, times)
    return out


def survival_loglik(
    params: HazardParams,
    traj: TrajectoryProvider,
    i: int,
    subject: SubjectRecord,
    n_nodes: int = DEFAULT_QUAD_NODES,
) -> float:
    """Competing-risks log-likelihood contribution of one subject.

    Event of cause l contributes log lambda_l(t_i); every subject contributes
    -sum_l Lambda_l(t_i).
    """
    if subject.cause > params.n_causes:
        raise DataError(
            f"subject {subject.id}: cause {subject.cause} but model has {params.n_causes} causes"
        )
    total = 0.0
    for l in range(params.n_causes):
        if subject.cause == l + 1:
            total += log_cause_hazard(params, traj, i, l, subject.event_time, subject.covariates)
        total -= cumulative_hazard(
            params, traj, i, l, subject.event_time, subject.covariates, n_nodes
        )
    return float(total)


def default_knots(event_times, causes, n_intervals: int = 5, pad: float = 1.01) -> np.ndarray:
    """Baseline knots at quantiles of the observed event times.

    Interior knots are event-time quantiles; the last knot is `pad` times the
    maximum observed (event or censoring) time.  Falls back to quantiles of
    all observed times when fewer events than intervals exist.
    """
    t = np.asarray(event_times, dtype=float)
    d = np.asarray(causes, dtype=int)
    if t.size == 0:
        raise DataError("cannot place knots without observed times")
    last = pad * float(t.max())
    ref = t[d > 0]
    if ref.size < n_intervals:
        ref = t
    qs = np.quantile(ref, np.arange(1, n_intervals) / n_intervals)
    knots = [0.0]
    for q in qs:
        if q > knots[-1] + 1e-9 and q < last - 1e-9:
            knots.append(float(q))
    knots.append(last)
    return np.array(knots)


# ---------------------------------------------------------------------------
# Vectorized quadrature layout shared by the MCMC fitters: all subjects'
# panel nodes in one zero-padded (N, R) block.
# ---------------------------------------------------------------------------


class SubjectQuadrature:
    """Padded per-subject quadrature panels over [0, t_i] for a common knot set.

    Attributes
    ----------
    nodes, weights : (N, R) arrays; padding columns carry weight 0.
    interval : (N, R) int array of baseline-interval indices (0 for padding).
    event_interval : (N,) int array, interval containing each t_i.
    """

    def __init__(self, knots: np.ndarray, event_times, n_nodes: int = DEFAULT_QUAD_NODES):
        knots = np.asarray(knots, dtype=float)
        t = np.asarray(event_times, dtype=float)
        if np.any(t > knots[-1] + 1e-12):
            raise DataError("event time beyond the last baseline knot")
        n = t.size
        n_int = knots.size - 1
        ref_x, ref_w = np.polynomial.legendre.leggauss(n_nodes)
        nodes = np.zeros((n, n_int * n_nodes))
        weights = np.zeros((n, n_int * n_nodes))
        interval = np.zeros((n, n_int * n_nodes), dtype=int)
        for k in range(n_int):
            lo, hi_knot = knots[k], knots[k + 1]
            hi = np.minimum(hi_knot, t)
            active = hi > lo
            half = np.where(active, 0.5 * (hi - lo), 0.0)
            cols = slice(k * n_nodes, (k + 1) * n_nodes)
            nodes[:, cols] = lo + half[:, None] * (ref_x[None, :] + 1.0)
            weights[:, cols] = half[:, None] * ref_w[None, :]
            interval[:, cols] = k
        self.knots = knots
        self.nodes = nodes
        self.weights = weights
        self.interval = interval
        self.event_interval = interval_index(knots, t)
        self.n_nodes = n_nodes

    @property
    def shape(self):
        return self.nodes.shape
