"""Stage 1: fit one-marker joint models and predict subject-level effects.

Each marker gets an independent joint fit of its mixed model with the
competing-risks outcome (conjugate Gibbs for the variances, random-walk MH
for coefficient blocks, baseline heights and per-subject random effects).
Keeping the survival term in these fits is what protects the predicted
trajectories from informative-dropout bias.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .hazard import SubjectQuadrature, default_knots
from .longitudinal import LongitudinalDataset, MarkerModelSpec, linear_predictor
from .samplers import (
    SCALAR_TARGET_RATE,
    VECTOR_TARGET_RATE,
    AdaptiveScale,
    McmcControl,
    PriorConfig,
    gibbs_invwishart,
    gibbs_sigma2,
    split_rhat,
)

RHAT_WARN = 1.1
LOG_2PI = float(np.log(2.0 * np.pi))


class _MarkerFitData:
    """Precomputed design arrays for one marker's joint-model likelihood."""

    def __init__(self, dataset: LongitudinalDataset, k: int, knots, n_nodes: int):
        spec = dataset.markers[k]
        subj_idx_all, times, values = dataset.marker_arrays(k)
        if times.size == 0:
            raise DataError(f"marker {spec.name!r} has no measurements")
        if np.ptp(values) == 0.0:
            raise DataError(f"marker {spec.name!r} is constant; joint fit is degenerate")
        retained = np.unique(subj_idx_all)
        if retained.size < 2:
            raise ConfigError(
                f"marker {spec.name!r}: need at least two subjects with measurements "
                "(random-effect covariance unidentifiable)"
            )
        if retained.size < dataset.n_subjects:
            warnings.warn(
                f"marker {spec.name!r}: {dataset.n_subjects - retained.size} subjects "
                "lack measurements and are dropped from this marker's fit",
                RuntimeWarning,
            )
        self.spec = spec
        self.shared_design = spec.fixed_design is spec.random_design
        self.marker_index = k
        self.retained = retained
        self.subject_ids = [dataset.subjects[i].id for i in retained]
        remap = {orig: new for new, orig in enumerate(retained)}
        self.subj_idx = np.array([remap[i] for i in subj_idx_all], dtype=int)
        self.n = retained.size
        self.times = times
        self.values = values
        self.X = spec.fixed_design(times)
        self.Z = spec.random_design(times)
        self.n_meas = np.bincount(self.subj_idx, minlength=self.n).astype(float)

        self.event_times = dataset.event_times()[retained]
        self.causes = dataset.causes()[retained]
        self.omega = dataset.covariate_matrix()[retained]
        self.n_causes = int(self.causes.max()) if self.causes.max() > 0 else 1
        self.knots = np.asarray(knots, dtype=float)
        self.quad = SubjectQuadrature(self.knots, self.event_times, n_nodes)
        flat_nodes = self.quad.nodes.ravel()
        nr = self.quad.nodes.shape
        self.Xn = spec.fixed_design(flat_nodes).reshape(nr[0], nr[1], spec.n_fixed)
        self.Zn = spec.random_design(flat_nodes).reshape(nr[0], nr[1], spec.n_random)
        self.Xe = spec.fixed_design(self.event_times)
        self.Ze = spec.random_design(self.event_times)
        self.is_event = np.stack([self.causes == l + 1 for l in range(self.n_causes)])
        self.n_intervals = self.knots.size - 1
        self.n_nodes = n_nodes
        self.event_counts = np.stack(
            [
                np.bincount(
                    self.quad.event_interval[self.is_event[l]], minlength=self.n_intervals
                )
                for l in range(self.n_causes)
            ]
        ).astype(float)

    def eta_nodes(self, beta, b):
        return self.Xn @ beta + np.einsum("nrq,nq->nr", self.Zn, b)

    def eta_event(self, beta, b):
        return self.Xe @ beta + np.einsum("nq,nq->n", self.Ze, b)

    def interval_mass(self, gw, alpha_l, eta_nodes):
        """Per-subject, per-interval quadrature mass of exp(exponent): (n, K)."""
        with np.errstate(over="ignore"):
            e = self.quad.weights * np.exp(gw[:, None] + alpha_l * eta_nodes)
        return e.reshape(self.n, self.n_intervals, self.n_nodes).sum(axis=2)

    def longitudinal_terms(self, beta, sigma2, b):
        resid = self.values - self.X @ beta - np.einsum("mq,mq->m", self.Z, b[self.subj_idx])
        ssr = np.bincount(self.subj_idx, weights=resid * resid, minlength=self.n)
        return -0.5 * self.n_meas * (LOG_2PI + np.log(sigma2)) - 0.5 * ssr / sigma2


def _survival_per_subject(md: _MarkerFitData, mass, e_event, lam):
    """Per-subject survival loglik from cached interval masses and exponents."""
    out = np.zeros(md.n)
    for l in range(md.n_causes):
        out -= mass[l] @ lam[l]
        ev = md.is_event[l]
        out[ev] += np.log(lam[l][md.quad.event_interval[ev]]) + e_event[l][ev]
    return out


@dataclass
class OneMarkerFit:
    """Posterior draws, plug-in estimates and predicted effects for one marker."""

    marker: str
    trend: str
    knots: np.ndarray
    subject_ids: list
    draws: dict
    theta_hat: dict
    bhat: np.ndarray
    diagnostics: dict
    control: McmcControl
    n_nodes: int

    @property
    def n_random(self) -> int:
        return self.bhat.shape[1]

    def spec(self) -> MarkerModelSpec:
        return MarkerModelSpec.from_trend(self.marker, self.trend)


def fit_one_marker(
    dataset: LongitudinalDataset,
    k: int,
    priors: PriorConfig = None,
    control: McmcControl = None,
    knots=None,
    n_nodes: int = 15,
    predict_control: dict = None,
) -> OneMarkerFit:
    """MCMC fit of the joint model for marker k and the competing risks.

    Conjugate Gibbs draws update the residual variance and random-effect
    covariance; coefficient blocks, baseline heights and per-subject effects
    move by adaptive random-walk MH.  Non-convergence (split-R-hat > 1.1)
    flags a warning on the returned fit rather than failing.
    """
    priors = priors or PriorConfig()
    control = control or McmcControl()
    if dataset.n_subjects < 2:
        raise ConfigError("joint fit needs at least two subjects")
    if knots is None:
        knots = default_knots(dataset.event_times(), dataset.causes())
    md = _MarkerFitData(dataset, k, knots, n_nodes)

    chains = [
        _run_chain(md, priors, control, chain)
        for chain in range(control.chains)
    ]
    draws = {
        name: np.concatenate([c[name] for c in chains], axis=0)
        for name in chains[0]
        if name != "acceptance"
    }
    theta_hat = {
        "beta": draws["beta"].mean(axis=0),
        "sigma2": float(draws["sigma2"].mean()),
        "Sigma": draws["Sigma"].mean(axis=0),
        "gamma": draws["gamma"].mean(axis=0),
        "alpha": draws["alpha"].mean(axis=0),
        "lam": draws["lam"].mean(axis=0),
    }

    rhat = {}
    kept = control.kept_per_chain
    for name in ("beta", "sigma2", "alpha", "lam", "gamma"):
        arr = draws[name].reshape(control.chains, kept, -1)
        for j in range(arr.shape[2]):
            rhat[f"{name}[{j}]"] = split_rhat(arr[:, :, j])
    max_rhat = float(np.nanmax(list(rhat.values())))
    converged = max_rhat <= RHAT_WARN
    if not converged:
        warnings.warn(
            f"marker {md.spec.name!r}: split-R-hat {max_rhat:.3f} exceeds {RHAT_WARN}",
            RuntimeWarning,
        )

    pc = {"n_kept": 500, "burnin": 200, "thin": 1, "seed": control.seed}
    pc.update(predict_control or {})
    bhat = _sample_effects_mean(
        md, theta_hat, condition="full", landmark=None,
        n_kept=pc["n_kept"], burnin=pc["burnin"], thin=pc["thin"],
        seed=pc["seed"], chain_tag=7001 + md.marker_index,
    )

    return OneMarkerFit(
        marker=md.spec.name,
        trend=md.spec.trend,
        knots=md.knots,
        subject_ids=md.subject_ids,
        draws=draws,
        theta_hat=theta_hat,
        bhat=bhat,
        diagnostics={
            "rhat": rhat,
            "max_rhat": max_rhat,
            "converged": converged,
            "acceptance": chains[0]["acceptance"],
        },
        control=control,
        n_nodes=n_nodes,
    )


def _run_chain(md: _MarkerFitData, priors: PriorConfig, control: McmcControl, chain: int):
    rng = np.random.default_rng(
        np.random.SeedSequence([int(control.seed), 0x57A9, int(md.marker_index), int(chain)])
    )
    n, q, p = md.n, md.spec.n_random, md.spec.n_fixed
    L, n_int = md.n_causes, md.n_intervals
    p_gamma = md.omega.shape[1]

    beta, _, _, _ = np.linalg.lstsq(md.X, md.values, rcond=None)
    resid0 = md.values - md.X @ beta
    sigma2 = max(float(np.var(resid0)), 1e-4)
    if chain > 0:
        beta = beta + 0.2 * np.sqrt(sigma2) * rng.standard_normal(p)
        sigma2 *= float(np.exp(0.3 * rng.standard_normal()))
    Sigma = np.eye(q)
    b = np.zeros((n, q))
    gamma = np.zeros((L, p_gamma))
    alpha = np.zeros(L)
    exposure = md.interval_mass(np.zeros(n), 0.0, np.zeros_like(md.quad.nodes))
    lam = (md.event_counts + 0.5) / (exposure.sum(axis=0)[None, :] + 1.0)
    lam = np.broadcast_to(lam, (L, n_int)).copy()
    if chain > 0:
        lam *= np.exp(0.2 * rng.standard_normal(lam.shape))

    wish_df = priors.wishart_df if priors.wishart_df is not None else q
    wish_scale = priors.wishart_scale * np.eye(q)

    scales = {
        "b": AdaptiveScale(scale=0.5, target=VECTOR_TARGET_RATE),
        "beta": AdaptiveScale(scale=0.1, target=VECTOR_TARGET_RATE),
    }
    for l in range(L):
        scales[f"gamma{l}"] = AdaptiveScale(scale=0.1, target=VECTOR_TARGET_RATE)
        scales[f"alpha{l}"] = AdaptiveScale(scale=0.2, target=SCALAR_TARGET_RATE)
        for kk in range(n_int):
            scales[f"lam{l}_{kk}"] = AdaptiveScale(scale=0.3, target=SCALAR_TARGET_RATE)

    eta_n = md.eta_nodes(beta, b)
    eta_e = md.eta_event(beta, b)
    gw = [md.omega @ gamma[l] for l in range(L)]
    mass = [md.interval_mass(gw[l], alpha[l], eta_n) for l in range(L)]
    e_event = [gw[l] + alpha[l] * eta_e for l in range(L)]
    long_cur = md.longitudinal_terms(beta, sigma2, b)

    kept = control.kept_per_chain
    out = {
        "beta": np.empty((kept, p)),
        "sigma2": np.empty(kept),
        "Sigma": np.empty((kept, q, q)),
        "gamma": np.empty((kept, L, p_gamma)),
        "alpha": np.empty((kept, L)),
        "lam": np.empty((kept, L, n_int)),
    }
    keep_at = 0

    coef_var = priors.coef_var
    a_lam, b_lam = priors.baseline_shape, priors.baseline_rate

    for it in range(control.iters):
        if it == control.burnin:
            for s in scales.values():
                s.freeze()

        # --- per-subject random effects, all subjects at once
        chol_S = np.linalg.cholesky(Sigma)
        prec = np.linalg.inv(Sigma)
        prop = b + scales["b"].scale * (rng.standard_normal((n, q)) @ chol_S.T)
        eta_n_p = eta_n + np.einsum("nrq,nq->nr", md.Zn, prop - b)
        eta_e_p = eta_e + np.einsum("nq,nq->n", md.Ze, prop - b)
        mass_p = [md.interval_mass(gw[l], alpha[l], eta_n_p) for l in range(L)]
        e_event_p = [gw[l] + alpha[l] * eta_e_p for l in range(L)]
        long_p = md.longitudinal_terms(beta, sigma2, prop)
        delta = (
            long_p
            - long_cur
            + _survival_per_subject(md, mass_p, e_event_p, lam)
            - _survival_per_subject(md, mass, e_event, lam)
            - 0.5 * (np.einsum("nq,qk,nk->n", prop, prec, prop) - np.einsum("nq,qk,nk->n", b, prec, b))
        )
        acc = np.log(rng.random(n)) < delta
        b[acc] = prop[acc]
        eta_n[acc] = eta_n_p[acc]
        eta_e[acc] = eta_e_p[acc]
        long_cur[acc] = long_p[acc]
        for l in range(L):
            mass[l][acc] = mass_p[l][acc]
            e_event[l][acc] = e_event_p[l][acc]
        scales["b"].update_rate(float(acc.mean()))

        # --- recentering interweave: with shared fixed/random designs the
        # likelihood depends on beta and b only through c_i = beta + b_i, so
        # beta | c has a closed-form Gaussian conditional.  This exact Gibbs
        # draw removes the slow ridge between beta and the random-effect mean.
        if md.shared_design:
            cond_prec = n * prec + np.eye(q) / coef_var
            csum = n * beta + b.sum(axis=0)
            chol_prec = np.linalg.cholesky(cond_prec)
            mean_beta = np.linalg.solve(cond_prec, prec @ csum)
            beta_new = mean_beta + np.linalg.solve(chol_prec.T, rng.standard_normal(q))
            b -= beta_new - beta
            beta = beta_new

        # --- fixed effects block
        beta_p = beta + scales["beta"].scale * rng.standard_normal(p)
        eta_n_p = eta_n + md.Xn @ (beta_p - beta)
        eta_e_p = eta_e + md.Xe @ (beta_p - beta)
        mass_p = [md.interval_mass(gw[l], alpha[l], eta_n_p) for l in range(L)]
        e_event_p = [gw[l] + alpha[l] * eta_e_p for l in range(L)]
        long_p = md.longitudinal_terms(beta_p, sigma2, b)
        delta = (
            float(np.sum(long_p - long_cur))
            + float(
                np.sum(
                    _survival_per_subject(md, mass_p, e_event_p, lam)
                    - _survival_per_subject(md, mass, e_event, lam)
                )
            )
            - 0.5 * (beta_p @ beta_p - beta @ beta) / coef_var
        )
        accepted = np.log(rng.random()) < delta
        if accepted:
            beta, eta_n, eta_e, mass, e_event, long_cur = (
                beta_p, eta_n_p, eta_e_p, mass_p, e_event_p, long_p,
            )
        scales["beta"].update(accepted)

        # --- residual variance (conjugate)
        resid = md.values - md.X @ beta - np.einsum("mq,mq->m", md.Z, b[md.subj_idx])
        sigma2 = gibbs_sigma2(rng, resid, priors.sigma2_shape, priors.sigma2_rate)
        long_cur = md.longitudinal_terms(beta, sigma2, b)

        # --- random-effect covariance (conjugate)
        Sigma = gibbs_invwishart(rng, b.T @ b, wish_scale, wish_df, n)

        # --- survival blocks per cause
        for l in range(L):
            surv_l_cur = -mass[l] @ lam[l]
            surv_l_cur[md.is_event[l]] += (
                np.log(lam[l][md.quad.event_interval[md.is_event[l]]])
                + e_event[l][md.is_event[l]]
            )

            g_p = gamma[l] + scales[f"gamma{l}"].scale * rng.standard_normal(p_gamma)
            gw_p = md.omega @ g_p
            mass_lp = md.interval_mass(gw_p, alpha[l], eta_n)
            e_event_lp = gw_p + alpha[l] * eta_e
            surv_l_p = -mass_lp @ lam[l]
            surv_l_p[md.is_event[l]] += (
                np.log(lam[l][md.quad.event_interval[md.is_event[l]]])
                + e_event_lp[md.is_event[l]]
            )
            delta = (
                float(np.sum(surv_l_p - surv_l_cur))
                - 0.5 * (g_p @ g_p - gamma[l] @ gamma[l]) / coef_var
            )
            accepted = np.log(rng.random()) < delta
            if accepted:
                gamma[l], gw[l], mass[l], e_event[l], surv_l_cur = (
                    g_p, gw_p, mass_lp, e_event_lp, surv_l_p,
                )
            scales[f"gamma{l}"].update(accepted)

            a_p = alpha[l] + scales[f"alpha{l}"].scale * rng.standard_normal()
            mass_lp = md.interval_mass(gw[l], a_p, eta_n)
            e_event_lp = gw[l] + a_p * eta_e
            surv_l_p = -mass_lp @ lam[l]
            surv_l_p[md.is_event[l]] += (
                np.log(lam[l][md.quad.event_interval[md.is_event[l]]])
                + e_event_lp[md.is_event[l]]
            )
            delta = float(np.sum(surv_l_p - surv_l_cur)) - 0.5 * (a_p**2 - alpha[l] ** 2) / coef_var
            accepted = np.log(rng.random()) < delta
            if accepted:
                alpha[l], mass[l], e_event[l], surv_l_cur = a_p, mass_lp, e_event_lp, surv_l_p
            scales[f"alpha{l}"].update(accepted)

            # baseline heights: log-scale random walks against interval masses
            q_mass = mass[l].sum(axis=0)
            for kk in range(n_int):
                cur = lam[l][kk]
                logp = lambda x, kk=kk: (
                    (md.event_counts[l][kk] + a_lam) * np.log(x) - x * (q_mass[kk] + b_lam)
                )
                stp = scales[f"lam{l}_{kk}"]
                prop_lam = cur * float(np.exp(stp.scale * rng.standard_normal()))
                accepted = np.log(rng.random()) < logp(prop_lam) - logp(cur)
                if accepted:
                    lam[l][kk] = prop_lam
                stp.update(accepted)

        if it >= control.burnin and (it - control.burnin) % control.thin == 0 and keep_at < kept:
            out["beta"][keep_at] = beta
            out["sigma2"][keep_at] = sigma2
            out["Sigma"][keep_at] = Sigma
            out["gamma"][keep_at] = gamma
            out["alpha"][keep_at] = alpha
            out["lam"][keep_at] = lam
            keep_at += 1

    out["acceptance"] = {name: s.acceptance_rate for name, s in scales.items()}
    return out


# ---------------------------------------------------------------------------
# Subject-level random-effect prediction with plug-in parameters
# ---------------------------------------------------------------------------


class _EffectsTarget:
    """Vectorized conditional of b_i given data, plug-in theta and survival info.

    condition "full": all measurements plus the full survival contribution
    (event indicator at t_i).  condition "landmark": measurements up to the
    landmark time s plus survival of both causes to s only.
    """

    def __init__(self, dataset, marker_index, fit: OneMarkerFit, condition, landmark):
        spec = fit.spec()
        theta = fit.theta_hat
        subj_all, times, values = dataset.marker_arrays(marker_index)
        if condition == "landmark":
            keep = times <= landmark + 1e-12
            subj_all, times, values = subj_all[keep], times[keep], values[keep]
        counts = np.bincount(subj_all, minlength=dataset.n_subjects)
        if np.any(counts == 0):
            missing = [dataset.subjects[i].id for i in np.nonzero(counts == 0)[0][:5]]
            raise DataError(
                f"marker {fit.marker!r}: subjects without usable measurements "
                f"for prediction: {missing}"
            )
        self.n = dataset.n_subjects
        self.subj_idx = subj_all
        self.values = values
        self.X = spec.fixed_design(times)
        self.Z = spec.random_design(times)
        self.beta = np.asarray(theta["beta"], dtype=float)
        self.sigma2 = float(theta["sigma2"])
        self.prec = np.linalg.inv(np.asarray(theta["Sigma"], dtype=float))
        self.chol = np.linalg.cholesky(np.asarray(theta["Sigma"], dtype=float))
        self.gamma = np.atleast_2d(np.asarray(theta["gamma"], dtype=float))
        self.alpha = np.atleast_1d(np.asarray(theta["alpha"], dtype=float))
        self.lam = np.atleast_2d(np.asarray(theta["lam"], dtype=float))
        self.L = self.gamma.shape[0]
        omega = dataset.covariate_matrix()
        self.gw = [omega @ self.gamma[l] for l in range(self.L)]

        if condition == "full":
            horizon = dataset.event_times()
            self.causes = dataset.causes()
        else:
            horizon = np.full(self.n, float(landmark))
            self.causes = np.zeros(self.n, dtype=int)
        horizon = np.minimum(horizon, fit.knots[-1])
        self.quad = SubjectQuadrature(fit.knots, horizon, fit.n_nodes)
        flat = self.quad.nodes.ravel()
        nr = self.quad.nodes.shape
        self.Xn = spec.fixed_design(flat).reshape(nr[0], nr[1], spec.n_fixed)
        self.Zn = spec.random_design(flat).reshape(nr[0], nr[1], spec.n_random)
        self.eta_n_fixed = self.Xn @ self.beta
        self.is_event = np.stack([self.causes == l + 1 for l in range(self.L)])
        self.Xe = spec.fixed_design(horizon)
        self.Ze = spec.random_design(horizon)
        self.eta_e_fixed = self.Xe @ self.beta
        self.event_interval = self.quad.event_interval
        self.q = spec.n_random

    def loglik(self, b):
        """Per-subject conditional log-density (up to a constant) at b (n, q)."""
        resid = (
            self.values
            - self.X @ self.beta
            - np.einsum("mq,mq->m", self.Z, b[self.subj_idx])
        )
        out = -0.5 * np.bincount(self.subj_idx, weights=resid**2, minlength=self.n) / self.sigma2
        eta_n = self.eta_n_fixed + np.einsum("nrq,nq->nr", self.Zn, b)
        eta_e = self.eta_e_fixed + np.einsum("nq,nq->n", self.Ze, b)
        for l in range(self.L):
            lam_nodes = self.lam[l][self.quad.interval]
            with np.errstate(over="ignore"):
                cum = np.einsum(
                    "nr,nr->n",
                    self.quad.weights * lam_nodes,
                    np.exp(self.gw[l][:, None] + self.alpha[l] * eta_n),
                )
            out -= cum
            ev = self.is_event[l]
            if np.any(ev):
                out[ev] += self.alpha[l] * eta_e[ev]
        out -= 0.5 * np.einsum("nq,qk,nk->n", b, self.prec, b)
        return out


def _sample_effects(
    target: _EffectsTarget, n_kept, burnin, thin, rng, collect=False
):
    n, q = target.n, target.q
    b = np.zeros((n, q))
    cur = target.loglik(b)
    scale = AdaptiveScale(scale=0.5, target=VECTOR_TARGET_RATE)
    total = burnin + n_kept * thin
    mean_acc = np.zeros((n, q))
    kept = 0
    draws = np.empty((n_kept, n, q)) if collect else None
    for it in range(total):
        if it == burnin:
            scale.freeze()
        prop = b + scale.scale * (rng.standard_normal((n, q)) @ target.chol.T)
        new = target.loglik(prop)
        acc = np.log(rng.random(n)) < new - cur
        b[acc] = prop[acc]
        cur[acc] = new[acc]
        scale.update_rate(float(acc.mean()))
        if it >= burnin and (it - burnin) % thin == 0 and kept < n_kept:
            mean_acc += b
            if collect:
                draws[kept] = b
            kept += 1
    return mean_acc / max(kept, 1), draws


def _sample_effects_mean(md, theta_hat, condition, landmark, n_kept, burnin, thin, seed, chain_tag):
    # internal variant used right after fitting, reusing the fit's arrays
    fit_like = OneMarkerFit(
        marker=md.spec.name, trend=md.spec.trend, knots=md.knots,
        subject_ids=md.subject_ids, draws={}, theta_hat=theta_hat,
        bhat=np.zeros((md.n, md.spec.n_random)), diagnostics={},
        control=McmcControl(), n_nodes=md.n_nodes,
    )

    class _View:
        n_subjects = md.n
        markers = [md.spec]
        subjects = [type("S", (), {"id": sid})() for sid in md.subject_ids]

        def marker_arrays(self, _k):
            return md.subj_idx, md.times, md.values

        def event_times(self):
            return md.event_times

        def causes(self):
            return md.causes

        def covariate_matrix(self):
            return md.omega

    target = _EffectsTarget(_View(), 0, fit_like, condition, landmark)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(chain_tag)]))
    mean, _ = _sample_effects(target, n_kept, burnin, thin, rng)
    return mean


def predict_random_effects(
    fit: OneMarkerFit,
    dataset: LongitudinalDataset,
    s: float = None,
    n_kept: int = 500,
    burnin: int = 200,
    thin: int = 1,
    seed: int = 0,
    collect: bool = False,
):
    """Posterior-mean random effects per subject under plug-in theta-hat.

    With `s=None` the conditional uses each subject's full data including the
    event indicator at t_i; with a landmark `s` it uses measurements up to s
    and survival of all causes to s (subjects treated as event-free at s).
    Returns the (n, q) posterior means, or (means, draws) when `collect`.
    """
    k = dataset.marker_index(fit.marker)
    condition = "full" if s is None else "landmark"
    target = _EffectsTarget(dataset, k, fit, condition, s)
    rng = np.random.default_rng(
        np.random.SeedSequence([int(seed), 0xB4A7, int(round(1000 * (s or -1.0)))])
    )
    mean, draws = _sample_effects(target, n_kept, burnin, thin, rng, collect=collect)
    return (mean, draws) if collect else mean


def predicted_trajectory(fit: OneMarkerFit, subject_index: int, t):
    """Plug-in trajectory eta(t | beta-hat, bhat_i); delegates to linear_predictor."""
    return linear_predictor(
        fit.spec(), np.asarray(fit.theta_hat["beta"], dtype=float), fit.bhat[subject_index], t
    )


# ---------------------------------------------------------------------------
# Fit artifact serialization (JSON per marker)
# ---------------------------------------------------------------------------


def _summaries(draws: dict) -> dict:
    out = {}
    for name, arr in draws.items():
        flat = arr.reshape(arr.shape[0], -1)
        out[name] = {
            "mean": flat.mean(axis=0).tolist(),
            "sd": flat.std(axis=0, ddof=1).tolist(),
            "q2.5": np.quantile(flat, 0.025, axis=0).tolist(),
            "q97.5": np.quantile(flat, 0.975, axis=0).tolist(),
            "shape": list(arr.shape[1:]),
        }
    return out


def save_fit(fit: OneMarkerFit, path, max_draws: int = 200) -> None:
    """Serialize a fit to JSON: plug-in estimates, summaries, bhat, thinned draws."""
    step = max(1, fit.draws["beta"].shape[0] // max_draws)
    thinned = {k: v[::step][:max_draws] for k, v in fit.draws.items()}
    payload = {
        "marker": fit.marker,
        "trend": fit.trend,
        "knots": fit.knots.tolist(),
        "n_nodes": fit.n_nodes,
        "subject_ids": list(fit.subject_ids),
        "theta_hat": {k: np.asarray(v).tolist() for k, v in fit.theta_hat.items()},
        "bhat": fit.bhat.tolist(),
        "summaries": _summaries(fit.draws),
        "thinned_draws": {k: v.tolist() for k, v in thinned.items()},
        "diagnostics": {
            "max_rhat": fit.diagnostics.get("max_rhat"),
            "converged": fit.diagnostics.get("converged"),
        },
        "control": {
            "chains": fit.control.chains,
            "iters": fit.control.iters,
            "burnin": fit.control.burnin,
            "thin": fit.control.thin,
            "seed": fit.control.seed,
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_fit(path) -> OneMarkerFit:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    draws = {k: np.asarray(v, dtype=float) for k, v in payload["thinned_draws"].items()}
    theta_hat = {k: np.asarray(v, dtype=float) for k, v in payload["theta_hat"].items()}
    theta_hat["sigma2"] = float(theta_hat["sigma2"])
    return OneMarkerFit(
        marker=payload["marker"],
        trend=payload["trend"],
        knots=np.asarray(payload["knots"], dtype=float),
        subject_ids=payload["subject_ids"],
        draws=draws,
        theta_hat=theta_hat,
        bhat=np.asarray(payload["bhat"], dtype=float),
        diagnostics=payload["diagnostics"],
        control=McmcControl(**payload["control"]),
        n_nodes=int(payload["n_nodes"]),
    )
