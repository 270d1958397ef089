"""Stage 2: spike-and-slab selection over the cause-specific hazard model,
plus the bias-reduction refit over a fixed selection mask.

Predicted marker trajectories enter as time-varying covariates; their values
at every quadrature node and event time are precomputed once, and every
coefficient update works through the exponent's dependence on that single
coefficient, so a sweep costs a handful of (N x nodes) array passes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .hazard import SubjectQuadrature, TrajectoryProvider
from .samplers import (
    SCALAR_TARGET_RATE,
    AdaptiveScale,
    McmcControl,
    PriorConfig,
    SpikeSlabConfig,
    SpikeSlabState,
    split_rhat,
    update_cs,
    update_ds,
)

RHAT_WARN = 1.1


class SelectionModelData:
    """Survival data plus trajectory values at quadrature nodes and event times."""

    def __init__(self, traj: TrajectoryProvider, event_times, causes, covariates, knots,
                 n_nodes: int = 15, n_causes: int = None):
        self.event_times = np.asarray(event_times, dtype=float)
        self.causes = np.asarray(causes, dtype=int)
        self.omega = np.atleast_2d(np.asarray(covariates, dtype=float))
        self.n = self.event_times.size
        if self.omega.shape[0] != self.n:
            raise DataError("covariate rows must match the number of subjects")
        self.knots = np.asarray(knots, dtype=float)
        self.quad = SubjectQuadrature(self.knots, self.event_times, n_nodes)
        self.n_causes = n_causes or max(int(self.causes.max()), 1)
        self.n_intervals = self.knots.size - 1
        self.n_nodes = n_nodes
        self.H = traj.values_at_nodes(self.quad.nodes)  # (N, R, K)
        self.H_event = traj.values_at_own_times(self.event_times)  # (N, K)
        self.n_markers = self.H.shape[2]
        self.is_event = np.stack([self.causes == l + 1 for l in range(self.n_causes)])
        self.event_counts = np.stack(
            [
                np.bincount(self.quad.event_interval[self.is_event[l]],
                            minlength=self.n_intervals)
                for l in range(self.n_causes)
            ]
        ).astype(float)

    def total_loglik(self, gammas, alphas, lams) -> float:
        """Full competing-risks log-likelihood at one parameter point."""
        total = 0.0
        for l in range(self.n_causes):
            gw = self.omega @ gammas[l]
            expo = gw[:, None] + self.H @ alphas[l]
            lam_nodes = lams[l][self.quad.interval]
            with np.errstate(over="ignore"):
                total -= float(np.sum(self.quad.weights * lam_nodes * np.exp(expo)))
            ev = self.is_event[l]
            total += float(
                np.sum(
                    np.log(lams[l][self.quad.event_interval[ev]])
                    + gw[ev]
                    + self.H_event[ev] @ alphas[l]
                )
            )
        return total


class _CauseKernel:
    """Incremental per-cause likelihood state for coefficient and height updates."""

    def __init__(self, data: SelectionModelData, l: int):
        self.data = data
        self.l = l
        self.active = bool(np.any(data.is_event[l]))
        self.ev = data.is_event[l]
        self.gamma = np.zeros(data.omega.shape[1])
        self.alpha = np.zeros(data.n_markers)
        exposure = data.quad.weights.reshape(
            data.n, data.n_intervals, data.n_nodes
        ).sum(axis=(0, 2))
        self.lam = (data.event_counts[l] + 0.5) / (exposure + 1.0)
        self.gw = np.zeros(data.n)
        self.assoc = np.zeros_like(data.quad.nodes)
        self.expE = np.ones_like(data.quad.nodes)
        self.lam_nodes = self.lam[data.quad.interval]

    def refresh(self):
        """Recompute caches from the coefficients, clearing incremental drift."""
        self.gw = self.data.omega @ self.gamma
        self.assoc = np.einsum("nrk,k->nr", self.data.H, self.alpha)
        with np.errstate(over="ignore"):
            self.expE = np.exp(self.gw[:, None] + self.assoc)
        self.lam_nodes = self.lam[self.data.quad.interval]

    def base_weight(self):
        """W * lambda(interval) * exp(current exponent): the P array."""
        return self.data.quad.weights * self.lam_nodes * self.expE

    def gamma_feature(self, j):
        return self.data.omega[:, j]

    def alpha_feature(self, k):
        return self.data.H[:, :, k]

    def event_sum_gamma(self, j):
        return float(np.sum(self.data.omega[self.ev, j]))

    def event_sum_alpha(self, k):
        return float(np.sum(self.data.H_event[self.ev, k]))

    def apply_gamma(self, j, delta):
        if delta == 0.0:
            return
        f = self.data.omega[:, j]
        self.gamma[j] += delta
        self.gw += delta * f
        with np.errstate(over="ignore"):
            self.expE *= np.exp(delta * f)[:, None]

    def apply_alpha(self, k, delta):
        if delta == 0.0:
            return
        f = self.data.H[:, :, k]
        self.alpha[k] += delta
        self.assoc += delta * f
        with np.errstate(over="ignore"):
            self.expE *= np.exp(delta * f)

    def interval_exposures(self):
        t = self.data.quad.weights * self.expE
        return t.reshape(self.data.n, self.data.n_intervals, self.data.n_nodes).sum(axis=(0, 2))


def _loglik_closure(s1, p, f, current):
    """loglik(c) relative to the current coefficient value `current`.

    `p` already carries exp at `current`; only the shift (c - current) is
    re-exponentiated.  Works for (N,) gamma features and (N, R) alpha features.
    """

    def loglik(c):
        with np.errstate(over="ignore"):
            val = c * s1 - float(np.sum(p * np.exp((c - current) * f)))
        return val if np.isfinite(val) else -np.inf

    return loglik


def _flat_loglik(_c):
    return 0.0


def _laplace_mode(s1, p, f, slab_var, offset: float = 0.0, steps: int = 3):
    """Newton mode/variance of loglik + slab prior in absolute coordinates.

    `p` carries the exponent at coefficient value `offset`; the search runs
    over the shift from there, penalizing the absolute value under the slab.
    """
    m = 0.0
    curv = -1.0 / slab_var
    for _ in range(steps):
        with np.errstate(over="ignore"):
            e = p * np.exp(m * f)
        ef = e * f
        grad = s1 - float(np.sum(ef)) - (offset + m) / slab_var
        curv = -float(np.sum(ef * f)) - 1.0 / slab_var
        if not np.isfinite(grad) or not np.isfinite(curv) or curv >= 0:
            return offset, slab_var
        m += float(np.clip(-grad / curv, -5.0, 5.0))
    return offset + m, min(-1.0 / curv, slab_var)


@dataclass
class SelectionFit:
    """Spike-and-slab posterior draws over (gamma, alpha, baseline heights)."""

    family: str
    knots: np.ndarray
    draws: dict
    control: McmcControl
    diagnostics: dict
    n_nodes: int

    @property
    def n_causes(self):
        return self.draws["alpha"].shape[1]


def fit_selection_model(
    data: SelectionModelData,
    cfg: SpikeSlabConfig = None,
    priors: PriorConfig = None,
    control: McmcControl = None,
) -> SelectionFit:
    """MCMC over the cause-specific hazard with spike-and-slab coefficient priors.

    Each sweep updates, per cause: baseline heights (log-scale MH against
    gamma priors), every covariate coefficient and every association
    coefficient through the configured CS/DS kernel.  A cause with no events
    reverts to its priors with a warning.
    """
    cfg = cfg or SpikeSlabConfig()
    priors = priors or PriorConfig()
    control = control or McmcControl()

    for l in range(data.n_causes):
        if not np.any(data.is_event[l]):
            warnings.warn(
                f"cause {l + 1} has no events; its coefficients revert to the prior",
                RuntimeWarning,
            )

    chains = [_run_selection_chain(data, cfg, priors, control, c) for c in range(control.chains)]
    draws = {
        name: np.concatenate([ch[name] for ch in chains], axis=0)
        for name in chains[0]
        if name != "acceptance"
    }

    rhat = {}
    kept = control.kept_per_chain
    for name in ("lam",):
        arr = draws[name].reshape(control.chains, kept, -1)
        for j in range(arr.shape[2]):
            rhat[f"{name}[{j}]"] = split_rhat(arr[:, :, j])
    max_rhat = float(np.nanmax(list(rhat.values())))
    converged = max_rhat <= RHAT_WARN
    if not converged:
        warnings.warn(
            f"stage-2 split-R-hat {max_rhat:.3f} exceeds {RHAT_WARN}", RuntimeWarning
        )
    return SelectionFit(
        family=cfg.family,
        knots=data.knots,
        draws=draws,
        control=control,
        diagnostics={
            "rhat": rhat,
            "max_rhat": max_rhat,
            "converged": converged,
            "acceptance": chains[0]["acceptance"],
        },
        n_nodes=data.n_nodes,
    )


def _run_selection_chain(data, cfg, priors, control, chain):
    rng = np.random.default_rng(
        np.random.SeedSequence([int(control.seed), 0x57A2, int(chain)])
    )
    L, p, K, n_int = data.n_causes, data.omega.shape[1], data.n_markers, data.n_intervals
    kernels = [_CauseKernel(data, l) for l in range(L)]
    gss = [SpikeSlabState.initial(p, cfg) for _ in range(L)]
    ass = [SpikeSlabState.initial(K, cfg) for _ in range(L)]
    a_lam, b_lam = priors.baseline_shape, priors.baseline_rate

    scales = {}
    for l in range(L):
        for j in range(p):
            scales[f"g{l}_{j}"] = AdaptiveScale(scale=0.2, target=SCALAR_TARGET_RATE)
        for k in range(K):
            scales[f"a{l}_{k}"] = AdaptiveScale(scale=0.2, target=SCALAR_TARGET_RATE)
        for kk in range(n_int):
            scales[f"lam{l}_{kk}"] = AdaptiveScale(scale=0.3, target=SCALAR_TARGET_RATE)

    kept = control.kept_per_chain
    out = {
        "gamma": np.empty((kept, L, p)),
        "alpha": np.empty((kept, L, K)),
        "gamma_incl": np.empty((kept, L, p), dtype=bool),
        "alpha_incl": np.empty((kept, L, K), dtype=bool),
        "lam": np.empty((kept, L, n_int)),
    }
    keep_at = 0

    for it in range(control.iters):
        if it == control.burnin:
            for s in scales.values():
                s.freeze()
        for l in range(L):
            ker = kernels[l]
            if it > 0 and it % 200 == 0:
                ker.refresh()

            # baseline heights
            q_mass = ker.interval_exposures() if ker.active else np.zeros(n_int)
            for kk in range(n_int):
                cur = ker.lam[kk]
                m_ev = data.event_counts[l][kk] if ker.active else 0.0

                def logp(x, m_ev=m_ev, q=q_mass[kk]):
                    return (m_ev + a_lam) * np.log(x) - x * (q + b_lam)

                stp = scales[f"lam{l}_{kk}"]
                prop = cur * float(np.exp(stp.scale * rng.standard_normal()))
                accepted = np.log(rng.random()) < logp(prop) - logp(cur)
                if accepted:
                    ker.lam[kk] = prop
                stp.update(accepted)
            ker.lam_nodes = ker.lam[data.quad.interval]

            # covariate coefficients: features constant over nodes, so the
            # weight array reduces to row sums maintained multiplicatively
            prow = ker.base_weight().sum(axis=1)
            for j in range(p):
                st = gss[l]
                old = float(st.value[j])
                if ker.active:
                    f = ker.gamma_feature(j)
                    s1 = ker.event_sum_gamma(j)
                    loglik = _loglik_closure(s1, prow, f, old)
                else:
                    loglik = _flat_loglik
                if cfg.family == "cs":
                    update_cs(rng, st, j, loglik, cfg, scales[f"g{l}_{j}"])
                else:
                    pseudo = (
                        _laplace_mode(s1, prow, f, float(st.slab_var[j]), offset=old)
                        if ker.active
                        else (0.0, float(st.slab_var[j]))
                    )
                    update_ds(rng, st, j, loglik, cfg, scales[f"g{l}_{j}"], pseudo=pseudo)
                delta = float(st.value[j]) - old
                if delta != 0.0 and ker.active:
                    ker.apply_gamma(j, delta)
                    with np.errstate(over="ignore"):
                        prow = prow * np.exp(delta * ker.gamma_feature(j))
                elif delta != 0.0:
                    ker.gamma[j] += delta

            # association coefficients
            for k in range(K):
                st = ass[l]
                old = float(st.value[k])
                if ker.active:
                    f = ker.alpha_feature(k)
                    s1 = ker.event_sum_alpha(k)
                    pbase = ker.base_weight()
                    loglik = _loglik_closure(s1, pbase, f, old)
                else:
                    loglik = _flat_loglik
                if cfg.family == "cs":
                    update_cs(rng, st, k, loglik, cfg, scales[f"a{l}_{k}"])
                else:
                    pseudo = (
                        _laplace_mode(s1, pbase, f, float(st.slab_var[k]), offset=old)
                        if ker.active
                        else (0.0, float(st.slab_var[k]))
                    )
                    update_ds(rng, st, k, loglik, cfg, scales[f"a{l}_{k}"], pseudo=pseudo)
                delta = float(st.value[k]) - old
                if delta != 0.0 and ker.active:
                    ker.apply_alpha(k, delta)
                elif delta != 0.0:
                    ker.alpha[k] += delta

        if it >= control.burnin and (it - control.burnin) % control.thin == 0 and keep_at < kept:
            for l in range(L):
                out["gamma"][keep_at, l] = gss[l].value
                out["alpha"][keep_at, l] = ass[l].value
                out["gamma_incl"][keep_at, l] = gss[l].included
                out["alpha_incl"][keep_at, l] = ass[l].included
                out["lam"][keep_at, l] = kernels[l].lam
            keep_at += 1

    out["acceptance"] = {
        name: s.acceptance_rate for name, s in scales.items() if not name.startswith("lam")
    }
    return out


# ---------------------------------------------------------------------------
# Bias-reduction refit over a fixed selection mask
# ---------------------------------------------------------------------------


@dataclass
class RefitFit:
    """Posterior draws of the hazard model with unselected coefficients pinned to 0."""

    knots: np.ndarray
    draws: dict
    mask_gamma: np.ndarray
    mask_alpha: np.ndarray
    control: McmcControl
    n_nodes: int

    def posterior_means(self):
        return (
            self.draws["gamma"].mean(axis=0),
            self.draws["alpha"].mean(axis=0),
            self.draws["lam"].mean(axis=0),
        )


def refit_selected(
    data: SelectionModelData,
    mask_gamma,
    mask_alpha,
    priors: PriorConfig = None,
    control: McmcControl = None,
) -> RefitFit:
    """Re-estimate the hazard model with normal priors on the selected
    coefficients only; everything outside the mask stays exactly zero.
    """
    priors = priors or PriorConfig()
    control = control or McmcControl()
    mask_gamma = np.atleast_2d(np.asarray(mask_gamma, dtype=bool))
    mask_alpha = np.atleast_2d(np.asarray(mask_alpha, dtype=bool))
    L, p, K = data.n_causes, data.omega.shape[1], data.n_markers
    if mask_gamma.shape != (L, p) or mask_alpha.shape != (L, K):
        raise DataError(
            f"selection masks must have shapes ({L},{p}) and ({L},{K}); got "
            f"{mask_gamma.shape} and {mask_alpha.shape}"
        )

    chains = [
        _run_refit_chain(data, mask_gamma, mask_alpha, priors, control, c)
        for c in range(control.chains)
    ]
    draws = {
        name: np.concatenate([ch[name] for ch in chains], axis=0)
        for name in chains[0]
    }
    return RefitFit(
        knots=data.knots,
        draws=draws,
        mask_gamma=mask_gamma,
        mask_alpha=mask_alpha,
        control=control,
        n_nodes=data.n_nodes,
    )


def _run_refit_chain(data, mask_gamma, mask_alpha, priors, control, chain):
    rng = np.random.default_rng(
        np.random.SeedSequence([int(control.seed), 0x2EF1, int(chain)])
    )
    L, p, K, n_int = data.n_causes, data.omega.shape[1], data.n_markers, data.n_intervals
    kernels = [_CauseKernel(data, l) for l in range(L)]
    a_lam, b_lam = priors.baseline_shape, priors.baseline_rate
    coef_var = priors.coef_var

    scales = {}
    for l in range(L):
        for j in np.nonzero(mask_gamma[l])[0]:
            scales[f"g{l}_{j}"] = AdaptiveScale(scale=0.2, target=SCALAR_TARGET_RATE)
        for k in np.nonzero(mask_alpha[l])[0]:
            scales[f"a{l}_{k}"] = AdaptiveScale(scale=0.2, target=SCALAR_TARGET_RATE)
        for kk in range(n_int):
            scales[f"lam{l}_{kk}"] = AdaptiveScale(scale=0.3, target=SCALAR_TARGET_RATE)

    kept = control.kept_per_chain
    out = {
        "gamma": np.zeros((kept, L, p)),
        "alpha": np.zeros((kept, L, K)),
        "lam": np.empty((kept, L, n_int)),
    }
    keep_at = 0

    for it in range(control.iters):
        if it == control.burnin:
            for s in scales.values():
                s.freeze()
        for l in range(L):
            ker = kernels[l]
            if it > 0 and it % 200 == 0:
                ker.refresh()
            q_mass = ker.interval_exposures() if ker.active else np.zeros(n_int)
            for kk in range(n_int):
                cur = ker.lam[kk]
                m_ev = data.event_counts[l][kk] if ker.active else 0.0

                def logp(x, m_ev=m_ev, q=q_mass[kk]):
                    return (m_ev + a_lam) * np.log(x) - x * (q + b_lam)

                stp = scales[f"lam{l}_{kk}"]
                prop = cur * float(np.exp(stp.scale * rng.standard_normal()))
                accepted = np.log(rng.random()) < logp(prop) - logp(cur)
                if accepted:
                    ker.lam[kk] = prop
                stp.update(accepted)
            ker.lam_nodes = ker.lam[data.quad.interval]

            prow = ker.base_weight().sum(axis=1)
            for j in np.nonzero(mask_gamma[l])[0]:
                old = ker.gamma[j]
                if ker.active:
                    f = ker.gamma_feature(j)
                    loglik = _loglik_closure(ker.event_sum_gamma(j), prow, f, old)
                else:
                    loglik = _flat_loglik
                stp = scales[f"g{l}_{j}"]
                prop = old + stp.scale * rng.standard_normal()
                delta_lp = (
                    loglik(prop) - loglik(old) - 0.5 * (prop**2 - old**2) / coef_var
                )
                accepted = np.log(rng.random()) < delta_lp
                if accepted:
                    if ker.active:
                        ker.apply_gamma(j, prop - old)
                        with np.errstate(over="ignore"):
                            prow = prow * np.exp((prop - old) * ker.gamma_feature(j))
                    else:
                        ker.gamma[j] = prop
                stp.update(accepted)

            for k in np.nonzero(mask_alpha[l])[0]:
                old = ker.alpha[k]
                if ker.active:
                    f = ker.alpha_feature(k)
                    loglik = _loglik_closure(
                        ker.event_sum_alpha(k), ker.base_weight(), f, old
                    )
                else:
                    loglik = _flat_loglik
                stp = scales[f"a{l}_{k}"]
                prop = old + stp.scale * rng.standard_normal()
                delta_lp = (
                    loglik(prop) - loglik(old) - 0.5 * (prop**2 - old**2) / coef_var
                )
                accepted = np.log(rng.random()) < delta_lp
                if accepted:
                    if ker.active:
                        ker.apply_alpha(k, prop - old)
                    else:
                        ker.alpha[k] = prop
                stp.update(accepted)

        if it >= control.burnin and (it - control.burnin) % control.thin == 0 and keep_at < kept:
            for l in range(L):
                out["gamma"][keep_at, l] = kernels[l].gamma
                out["alpha"][keep_at, l] = kernels[l].alpha
                out["lam"][keep_at, l] = kernels[l].lam
            keep_at += 1

    return out
