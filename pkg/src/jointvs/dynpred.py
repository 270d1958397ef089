"""Landmark dynamic prediction of cause-1 risk.

The point estimate plugs posterior means and predicted random effects into
the first-order risk formula: the cause-1 density over (s, s+t], integrated
by fixed-node quadrature, divided by overall survival to s.  Credible
intervals come from rerunning the formula over joint posterior draws with
fresh subject-level effect draws per parameter draw.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .hazard import PolynomialTrajectories, TrajectoryProvider, interval_index, segment_panels
from .longitudinal import LongitudinalDataset
from .samplers import AdaptiveScale, VECTOR_TARGET_RATE
from .stage1 import OneMarkerFit, predict_random_effects

DEFAULT_OUTER_NODES = 15


@dataclass
class PredictionRequest:
    """Landmark s, window t and Monte-Carlo draw counts."""

    landmark: float
    window: float
    n_param_draws: int = 200
    n_effect_draws: int = 5

    def __post_init__(self):
        if self.landmark < 0:
            raise ConfigError("landmark must be nonnegative")
        if self.window <= 0:
            raise ConfigError("prediction window must be positive")


@dataclass
class FittedModelBundle:
    """Stage-1 fits plus a hazard-parameter point estimate (and draws)."""

    marker_fits: list
    gammas: np.ndarray  # (L, p)
    alphas: np.ndarray  # (L, K)
    lam: np.ndarray     # (L, n_intervals)
    knots: np.ndarray
    hazard_draws: dict = None  # gamma/alpha/lam draws for interval estimation
    n_nodes: int = 15

    @property
    def n_causes(self):
        return self.gammas.shape[0]


def trajectories_from_fits(fits, bhats) -> PolynomialTrajectories:
    """Plug-in polynomial trajectories beta_hat + bhat per subject/marker."""
    degree = max(np.asarray(f.theta_hat["beta"]).size for f in fits)
    n = bhats[0].shape[0]
    coeffs = np.zeros((n, len(fits), degree))
    for k, (fit, bh) in enumerate(zip(fits, bhats)):
        beta = np.asarray(fit.theta_hat["beta"], dtype=float)
        coeffs[:, k, : beta.size] = beta[None, :] + bh
    return PolynomialTrajectories(coeffs)


def cause1_risks(
    gammas,
    alphas,
    lam,
    knots,
    traj: TrajectoryProvider,
    omegas,
    s: float,
    t: float,
    n_nodes: int = 15,
    outer_nodes: int = DEFAULT_OUTER_NODES,
) -> np.ndarray:
    """Vectorized plug-in cause-1 risk over (s, s+t] for all subjects.

    risk_i = int_s^{s+t} exp(-sum_l Lambda_l(u)) lambda_1(u) du / exp(-sum_l Lambda_l(s))
    """
    gammas = np.atleast_2d(np.asarray(gammas, dtype=float))
    alphas = np.atleast_2d(np.asarray(alphas, dtype=float))
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    knots = np.asarray(knots, dtype=float)
    omegas = np.atleast_2d(np.asarray(omegas, dtype=float))
    if s + t > knots[-1] + 1e-9:
        raise DataError(f"prediction horizon {s + t} exceeds the baseline range {knots[-1]}")
    n = omegas.shape[0]
    n_causes = gammas.shape[0]

    ref_x, ref_w = np.polynomial.legendre.leggauss(outer_nodes)
    u = s + 0.5 * t * (ref_x + 1.0)
    w_outer = 0.5 * t * ref_w

    gw = omegas @ gammas.T  # (n, L)

    def cumhaz_at(upper):
        """(n, L) cumulative hazards to `upper` for all subjects."""
        times, weights, intervals = segment_panels(knots, upper, n_nodes)
        out = np.zeros((n, n_causes))
        if times.size == 0:
            return out
        eta = traj.values_all(times)  # (n, R, K)
        for l in range(n_causes):
            expo = gw[:, l][:, None] + eta @ alphas[l]
            with np.errstate(over="ignore"):
                out[:, l] = np.sum((weights * lam[l][intervals])[None, :] * np.exp(expo), axis=1)
        return out

    surv_s = np.exp(-cumhaz_at(s).sum(axis=1))
    integrand = np.zeros(n)
    for g in range(outer_nodes):
        cum = cumhaz_at(float(u[g]))
        eta_u = traj.values_all(np.array([u[g]]))[:, 0, :]  # (n, K)
        idx = int(interval_index(knots, float(u[g])))
        with np.errstate(over="ignore"):
            haz1 = lam[0][idx] * np.exp(gw[:, 0] + eta_u @ alphas[0])
        integrand += w_outer[g] * np.exp(-cum.sum(axis=1)) * haz1
    with np.errstate(invalid="ignore", divide="ignore"):
        risk = np.where(surv_s > 0, integrand / surv_s, 1.0)
    return np.clip(risk, 0.0, 1.0)


def risk_point(
    bundle: FittedModelBundle,
    dataset: LongitudinalDataset,
    subject_index: int,
    req: PredictionRequest,
    seed: int = 0,
    effect_kept: int = 500,
    effect_burnin: int = 200,
) -> float:
    """Plug-in risk for one subject using landmark-conditioned effect means."""
    s, t = req.landmark, req.window
    record = dataset.subjects[subject_index]
    if record.event_time <= s:
        raise DataError(
            f"subject {record.id} is not at risk at landmark {s} "
            f"(observed time {record.event_time})"
        )
    sub = dataset.subset([subject_index])
    bhats = [
        predict_random_effects(
            fit, sub, s=s, n_kept=effect_kept, burnin=effect_burnin,
            seed=_subject_seed(seed, record.id),
        )
        for fit in bundle.marker_fits
    ]
    traj = trajectories_from_fits(bundle.marker_fits, bhats)
    risk = cause1_risks(
        bundle.gammas, bundle.alphas, bundle.lam, bundle.knots,
        traj, record.covariates[None, :], s, t, bundle.n_nodes,
    )
    return float(risk[0])


def _subject_seed(seed: int, subject_id: str) -> int:
    return (int(seed) << 16) ^ zlib.crc32(str(subject_id).encode())


def _thin_indices(total: int, want: int) -> np.ndarray:
    want = min(want, total)
    return np.unique(np.linspace(0, total - 1, want).astype(int))


def risk_draws(
    bundle: FittedModelBundle,
    dataset: LongitudinalDataset,
    subject_index: int,
    req: PredictionRequest,
    seed: int = 0,
):
    """Monte-Carlo risk draws pi^(l,m) plus (mean, lo95, hi95).

    For each thinned joint parameter draw, subject-level effects are redrawn
    from their landmark conditional under that parameter draw; each pair
    yields one plug-in risk evaluation.
    """
    if bundle.hazard_draws is None:
        raise ConfigError("risk_draws needs hazard posterior draws in the bundle")
    s, t = req.landmark, req.window
    record = dataset.subjects[subject_index]
    if record.event_time <= s:
        raise DataError(f"subject {record.id} is not at risk at landmark {s}")
    rng = np.random.default_rng(
        np.random.SeedSequence([int(seed), 0xD12A, zlib.crc32(str(record.id).encode())])
    )

    hz = bundle.hazard_draws
    n_hz = hz["gamma"].shape[0]
    idx_hz = _thin_indices(n_hz, req.n_param_draws)
    n_draws = idx_hz.size
    gammas_d = hz["gamma"][idx_hz]
    alphas_d = hz["alpha"][idx_hz]
    lams_d = hz["lam"][idx_hz]

    k_markers = len(bundle.marker_fits)
    degree = max(np.asarray(f.theta_hat["beta"]).size for f in bundle.marker_fits)
    betas_d = np.zeros((n_draws, k_markers, degree))
    b_draws = np.zeros((req.n_effect_draws, n_draws, k_markers, degree))
    for k, fit in enumerate(bundle.marker_fits):
        fit_draws = fit.draws
        idx_k = _thin_indices(fit_draws["beta"].shape[0], n_draws)
        if idx_k.size < n_draws:  # recycle if the fit kept fewer draws
            idx_k = np.resize(idx_k, n_draws)
        theta = {
            "beta": fit_draws["beta"][idx_k],
            "sigma2": fit_draws["sigma2"][idx_k],
            "Sigma": fit_draws["Sigma"][idx_k],
            "gamma": fit_draws["gamma"][idx_k],
            "alpha": fit_draws["alpha"][idx_k],
            "lam": fit_draws["lam"][idx_k],
        }
        betas_d[:, k, : theta["beta"].shape[1]] = theta["beta"]
        bk = _sample_effects_per_draw(
            fit, dataset, subject_index, s, theta, req.n_effect_draws, rng
        )  # (M, D, q)
        b_draws[:, :, k, : bk.shape[2]] = bk

    risks = np.empty((n_draws, req.n_effect_draws))
    for m in range(req.n_effect_draws):
        coeffs = betas_d + b_draws[m]  # (D, K, degree)
        risks[:, m] = _risks_over_draws(
            gammas_d, alphas_d, lams_d, bundle.knots, coeffs,
            record.covariates, s, t, bundle.n_nodes,
        )
    flat = risks.ravel()
    summary = {
        "mean": float(flat.mean()),
        "lo95": float(np.quantile(flat, 0.025)),
        "hi95": float(np.quantile(flat, 0.975)),
    }
    return flat, summary


def _sample_effects_per_draw(fit, dataset, subject_index, s, theta, n_effect_draws, rng,
                             burnin: int = 100, thin: int = 5):
    """MH draws of one subject's effects under each parameter draw: (M, D, q)."""
    spec = fit.spec()
    k = dataset.marker_index(fit.marker)
    record = dataset.subjects[subject_index]
    keep = record.times[k] <= s + 1e-12
    times, values = record.times[k][keep], record.values[k][keep]
    if times.size == 0:
        raise DataError(
            f"subject {record.id}: no measurements for marker {fit.marker} at or before {s}"
        )
    X = spec.fixed_design(times)
    Z = spec.random_design(times)
    q = spec.n_random
    D = theta["beta"].shape[0]
    L = theta["gamma"].shape[1]
    omega = record.covariates

    qt, qw, qi = segment_panels(fit.knots, min(s, fit.knots[-1]), fit.n_nodes)
    Xn = spec.fixed_design(qt) if qt.size else np.zeros((0, spec.n_fixed))
    Zn = spec.random_design(qt) if qt.size else np.zeros((0, q))

    betas = theta["beta"]  # (D, p)
    sig2 = np.asarray(theta["sigma2"], dtype=float)  # (D,)
    Sig = np.asarray(theta["Sigma"], dtype=float).reshape(D, q, q)
    gam = np.asarray(theta["gamma"], dtype=float)  # (D, L, p_gamma)
    alp = np.asarray(theta["alpha"], dtype=float).reshape(D, L)
    lamd = np.asarray(theta["lam"], dtype=float)  # (D, L, K_int)
    chol = np.linalg.cholesky(Sig)
    prec = np.linalg.inv(Sig)
    gw = np.einsum("dlp,p->dl", gam, omega)  # (D, L)

    def loglik(B):  # B: (D, q)
        mean = X @ betas.T + Z @ B.T  # (m, D)
        out = -0.5 * np.sum((values[:, None] - mean) ** 2, axis=0) / sig2
        if qt.size:
            eta = Xn @ betas.T + Zn @ B.T  # (R, D)
            for l in range(L):
                lam_nodes = lamd[:, l, :][:, qi]  # (D, R)
                with np.errstate(over="ignore"):
                    out -= np.sum(
                        (qw[None, :] * lam_nodes) * np.exp(gw[:, l][:, None] + alp[:, l][:, None] * eta.T),
                        axis=1,
                    )
        out -= 0.5 * np.einsum("dq,dqk,dk->d", B, prec, B)
        return out

    B = np.zeros((D, q))
    cur = loglik(B)
    scale = AdaptiveScale(scale=0.5, target=VECTOR_TARGET_RATE)
    out = np.empty((n_effect_draws, D, q))
    kept = 0
    total = burnin + n_effect_draws * thin
    for it in range(total):
        if it == burnin:
            scale.freeze()
        eps = np.einsum("dqk,dk->dq", chol, rng.standard_normal((D, q)))
        prop = B + scale.scale * eps
        new = loglik(prop)
        acc = np.log(rng.random(D)) < new - cur
        B[acc] = prop[acc]
        cur[acc] = new[acc]
        scale.update_rate(float(acc.mean()))
        if it >= burnin and (it - burnin) % thin == 0 and kept < n_effect_draws:
            out[kept] = B
            kept += 1
    return out


def _risks_over_draws(gammas, alphas, lams, knots, coeffs, omega, s, t, n_nodes,
                      outer_nodes: int = DEFAULT_OUTER_NODES):
    """Risks per posterior draw: parameters and trajectories vary by draw."""
    D, L = gammas.shape[0], gammas.shape[1]
    degree = coeffs.shape[2]
    gw = np.einsum("dlp,p->dl", gammas, omega)  # (D, L)

    ref_x, ref_w = np.polynomial.legendre.leggauss(outer_nodes)
    u = s + 0.5 * t * (ref_x + 1.0)
    w_outer = 0.5 * t * ref_w

    def eta_at(times):  # (D, R, K)
        powers = np.vander(np.asarray(times, dtype=float), degree, increasing=True)
        return np.einsum("re,dke->drk", powers, coeffs)

    def cumhaz_at(upper):  # (D, L)
        times, weights, intervals = segment_panels(knots, upper, n_nodes)
        out = np.zeros((D, L))
        if times.size == 0:
            return out
        eta = eta_at(times)
        for l in range(L):
            expo = gw[:, l][:, None] + np.einsum("drk,dk->dr", eta, alphas[:, l, :])
            lam_nodes = lams[:, l, :][:, intervals]  # (D, R)
            with np.errstate(over="ignore"):
                out[:, l] = np.sum(weights[None, :] * lam_nodes * np.exp(expo), axis=1)
        return out

    surv_s = np.exp(-cumhaz_at(s).sum(axis=1))
    integrand = np.zeros(D)
    for g in range(outer_nodes):
        cum = cumhaz_at(float(u[g]))
        eta_u = eta_at([u[g]])[:, 0, :]  # (D, K)
        idx = int(interval_index(knots, float(u[g])))
        with np.errstate(over="ignore"):
            haz1 = lams[:, 0, idx] * np.exp(gw[:, 0] + np.einsum("dk,dk->d", eta_u, alphas[:, 0, :]))
        integrand += w_outer[g] * np.exp(-cum.sum(axis=1)) * haz1
    with np.errstate(invalid="ignore", divide="ignore"):
        risk = np.where(surv_s > 0, integrand / surv_s, 1.0)
    return np.clip(risk, 0.0, 1.0)
