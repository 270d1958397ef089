"""Synthetic-data generator for the simulation scenarios.

Ten linear-trend markers share block-correlated random effects; two competing
causes act through constant baseline hazards, 24 time-invariant covariates
(12 Gaussian, 12 Bernoulli) and the current marker values.  Latent cause
times come from inverting each cause's cumulative hazard at a unit
exponential draw.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError
from .longitudinal import LongitudinalDataset, MarkerModelSpec, SubjectRecord

PATTERNS = ("common", "single-cause-1", "single-both", "opposite")

DEFAULT_BASELINE_HEIGHT = 0.25  # calibrated; see scripts/calibrate_baseline.py


@dataclass
class ScenarioConfig:
    """One simulation scenario with known ground truth."""

    n_subjects: int = 1000
    n_markers: int = 10
    sigma2: float = 0.5
    rho: float = 0.1
    alpha_star: float = 1.0
    gamma_star: float = 1.0
    pattern: str = "common"
    beta: tuple = (-0.5, 0.5)
    grid_step: float = 0.1
    grid_end: float = 2.0
    baseline_heights: tuple = (DEFAULT_BASELINE_HEIGHT, DEFAULT_BASELINE_HEIGHT)
    censor_low: Optional[float] = 0.5
    censor_high: Optional[float] = 2.5
    admin_censor: Optional[float] = 2.0
    n_gaussian_covariates: int = 12
    n_binary_covariates: int = 12
    train_fraction: float = 0.5

    def __post_init__(self):
        if self.n_subjects < 2:
            raise ConfigError("scenario needs at least two subjects")
        if not -1.0 < self.rho < 1.0:
            raise ConfigError(f"rho must lie in (-1, 1), got {self.rho}")
        if self.pattern not in PATTERNS:
            raise ConfigError(f"unknown effect pattern {self.pattern!r}; expected {PATTERNS}")
        if not 0.0 <= self.train_fraction <= 1.0:
            raise ConfigError("train_fraction must lie in [0, 1]")
        if any(h <= 0 for h in self.baseline_heights):
            raise ConfigError("baseline heights must be positive")

    @property
    def n_covariates(self) -> int:
        return self.n_gaussian_covariates + self.n_binary_covariates

    @property
    def n_causes(self) -> int:
        return len(self.baseline_heights)


def build_covariance(rho: float, n_markers: int = 10) -> np.ndarray:
    """Block covariance of the stacked (intercept, slope) random effects.

    Within-marker blocks are [[1, .5], [.5, 1]]; between-marker blocks are
    rho * ones(2, 2).  Raises if the result is not positive definite.
    """
    within = np.array([[1.0, 0.5], [0.5, 1.0]])
    between = rho * np.ones((2, 2))
    q = 2 * n_markers
    cov = np.empty((q, q))
    for a in range(n_markers):
        for b in range(n_markers):
            cov[2 * a : 2 * a + 2, 2 * b : 2 * b + 2] = within if a == b else between
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ConfigError(f"random-effect covariance not positive definite for rho={rho}") from exc
    return cov


def effect_vectors(cfg: ScenarioConfig):
    """True (alphas, gammas) per cause for the configured pattern."""
    a, g = cfg.alpha_star, cfg.gamma_star
    K, p = cfg.n_markers, cfg.n_covariates
    if K < 4 or p < 24:
        raise ConfigError("effect patterns require at least 4 markers and 24 covariates")

    def alpha_common():
        v = np.zeros(K)
        v[:4] = [-a, -a, a, a]
        return v

    def gamma_common(sign=1.0):
        v = np.zeros(p)
        v[0], v[1], v[12], v[13] = sign * g, -sign * g, sign * g, -sign * g
        return v

    if cfg.pattern == "common":
        alphas = np.stack([alpha_common(), alpha_common()])
        gammas = np.stack([gamma_common(), gamma_common()])
    elif cfg.pattern == "single-cause-1":
        alphas = np.stack([alpha_common(), np.zeros(K)])
        gammas = np.stack([gamma_common(), gamma_common()])
    elif cfg.pattern == "single-both":
        a1 = np.zeros(K)
        a1[:2] = a
        a2 = np.zeros(K)
        a2[2:4] = a
        g1 = np.zeros(p)
        g1[:2] = g
        g2 = np.zeros(p)
        g2[12:14] = g
        alphas = np.stack([a1, a2])
        gammas = np.stack([g1, g2])
    else:  # opposite
        alphas = np.stack([alpha_common(), -alpha_common()])
        gammas = np.stack([gamma_common(), gamma_common(-1.0)])
    return alphas, gammas


def cumulative_hazard_linear_exponent(lam0: float, a, b, t):
    """Closed-form integral of lam0*exp(a + b*u) over [0, t], stable near b=0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t = np.asarray(t, dtype=float)
    bt = b * t
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.where(np.abs(bt) < 1e-12, 1.0, np.expm1(bt) / np.where(bt == 0, 1.0, bt))
    return lam0 * np.exp(a) * t * ratio


def invert_cumulative_hazard(cumhaz, targets, t_max: float = 50.0, tol: float = 1e-10):
    """Vectorized bisection solve of cumhaz(t) = target on [0, t_max].

    Entries whose cumulative hazard never reaches the target get +inf.
    """
    targets = np.asarray(targets, dtype=float)
    lo = np.zeros_like(targets)
    hi = np.full_like(targets, t_max)
    with np.errstate(over="ignore"):
        reachable = cumhaz(hi) >= targets
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        with np.errstate(over="ignore"):
            below = cumhaz(mid) < targets
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    out = 0.5 * (lo + hi)
    return np.where(reachable, out, np.inf)


def simulate_dataset(cfg: ScenarioConfig, seed: int):
    """Generate one dataset plus its ground truth.

    Returns (LongitudinalDataset, truth dict).  The truth dict carries the
    true parameters, random effects, masks and the event-rate record.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x51]))
    n, K, L = cfg.n_subjects, cfg.n_markers, cfg.n_causes
    cov = build_covariance(cfg.rho, K)
    chol = np.linalg.cholesky(cov)
    b = rng.standard_normal((n, 2 * K)) @ chol.T  # (n, 2K): (b0, b1) per marker

    w_gauss = rng.standard_normal((n, cfg.n_gaussian_covariates))
    w_bin = (rng.random((n, cfg.n_binary_covariates)) < 0.5).astype(float)
    omega = np.concatenate([w_gauss, w_bin], axis=1)

    alphas, gammas = effect_vectors(cfg)
    beta0, beta1 = cfg.beta
    intercepts = beta0 + b[:, 0::2]  # (n, K)
    slopes = beta1 + b[:, 1::2]

    latent = np.empty((n, L))
    for l in range(L):
        expo_a = omega @ gammas[l] + intercepts @ alphas[l]
        expo_b = slopes @ alphas[l]
        targets = rng.exponential(size=n)
        lam0 = cfg.baseline_heights[l]
        latent[:, l] = invert_cumulative_hazard(
            lambda t, ea=expo_a, eb=expo_b, lam=lam0: cumulative_hazard_linear_exponent(
                lam, ea, eb, t
            ),
            targets,
        )

    censor = np.full(n, np.inf)
    if cfg.censor_low is not None and cfg.censor_high is not None:
        censor = rng.uniform(cfg.censor_low, cfg.censor_high, size=n)
    if cfg.admin_censor is not None:
        censor = np.minimum(censor, cfg.admin_censor)

    event_time = np.minimum(latent.min(axis=1), censor)
    if not np.all(np.isfinite(event_time)):
        raise DataError("some subjects have neither an event nor a censoring time")
    cause = np.where(latent.min(axis=1) <= censor, latent.argmin(axis=1) + 1, 0)

    grid = np.round(np.arange(0.0, cfg.grid_end + 1e-9, cfg.grid_step), 10)
    markers = tuple(MarkerModelSpec.from_trend(f"m{k + 1}", "linear") for k in range(K))
    width = len(str(n))
    subjects = []
    for i in range(n):
        times_i = grid[grid <= event_time[i] + 1e-12]
        if times_i.size == 0:
            times_i = grid[:1]
        meas_t, meas_v = [], []
        for k in range(K):
            noise = rng.normal(scale=np.sqrt(cfg.sigma2), size=times_i.size)
            y = intercepts[i, k] + slopes[i, k] * times_i + noise
            meas_t.append(times_i.copy())
            meas_v.append(y)
        subjects.append(
            SubjectRecord(
                id=f"s{i + 1:0{width}d}",
                event_time=float(event_time[i]),
                cause=int(cause[i]),
                covariates=omega[i],
                times=tuple(meas_t),
                values=tuple(meas_v),
            )
        )
    dataset = LongitudinalDataset(subjects=tuple(subjects), markers=markers)

    counts = np.bincount(cause, minlength=L + 1)
    truth = {
        "seed": int(seed),
        "config": asdict(cfg),
        "alphas": alphas.tolist(),
        "gammas": gammas.tolist(),
        "marker_mask": (alphas != 0.0).tolist(),
        "covariate_mask": (gammas != 0.0).tolist(),
        "beta": [list(cfg.beta) for _ in range(K)],
        "sigma2": [cfg.sigma2] * K,
        "covariance": cov.tolist(),
        "random_effects": b.tolist(),
        "ids": [s.id for s in subjects],
        "baseline_heights": list(cfg.baseline_heights),
        "event_rates": {
            "censored": counts[0] / n,
            **{f"cause_{l + 1}": counts[l + 1] / n for l in range(L)},
        },
    }
    return dataset, truth


def split_train_validation(dataset: LongitudinalDataset, fractions, seed: int):
    """Disjoint subject-level split, reproducible by seed.

    Returns (train, validation, train_idx, validation_idx).
    """
    f_train, f_valid = fractions
    if not np.isclose(f_train + f_valid, 1.0):
        raise ConfigError(f"split fractions must sum to 1, got {fractions}")
    n = dataset.n_subjects
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5F11]))
    perm = rng.permutation(n)
    n_train = int(round(f_train * n))
    train_idx = np.sort(perm[:n_train])
    valid_idx = np.sort(perm[n_train:])
    return (
        dataset.subset(train_idx),
        dataset.subset(valid_idx),
        train_idx,
        valid_idx,
    )


def write_truth(truth: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=1)


def read_truth(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
