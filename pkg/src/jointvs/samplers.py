"""MCMC building blocks: conjugate Gibbs draws, adaptive random-walk
Metropolis-Hastings, and the continuous/Dirac spike-and-slab update kernels.

Indicator orientation: everywhere in this package `included` means "the
coefficient is currently drawn from the slab", i.e. the variable is in the
model.  Exclusion probabilities and false-discovery summaries are derived
from `1 - included`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .errors import ConfigError, DataError, NumericalError

VECTOR_TARGET_RATE = 0.23
SCALAR_TARGET_RATE = 0.44


@dataclass
class PriorConfig:
    """Weakly-informative priors for the unpenalized model blocks."""

    coef_var: float = 100.0        # N(0, coef_var) for unpenalized coefficients
    sigma2_shape: float = 0.01     # IG(shape, rate) for residual variances
    sigma2_rate: float = 0.01
    wishart_df: float | None = None     # defaults to dim(b)
    wishart_scale: float = 1.0          # identity * wishart_scale
    baseline_shape: float = 0.01   # Gamma(shape, rate): mean 1, variance 100
    baseline_rate: float = 0.01

    def __post_init__(self):
        for name in ("coef_var", "sigma2_shape", "sigma2_rate", "baseline_shape", "baseline_rate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"prior hyperparameter {name} must be positive")


@dataclass
class SpikeSlabConfig:
    """Spike-and-slab prior family and hyperparameters.

    family "cs": continuous spike N(0, spike_var); "ds": point mass at zero.
    (beta_a, beta_b) parameterize the Beta prior on the inclusion probability,
    so the prior inclusion mass is beta_a / (beta_a + beta_b).
    """

    family: str = "cs"
    spike_var: float = 1e-3
    slab_shape: float = 0.01
    slab_rate: float = 0.01
    beta_a: float = 1.0
    beta_b: float = 1.0

    def __post_init__(self):
        if self.family not in ("cs", "ds"):
            raise ConfigError(f"spike-and-slab family must be 'cs' or 'ds', got {self.family!r}")
        if self.spike_var <= 0:
            raise ConfigError("spike_var must be positive")
        if self.beta_a <= 0 or self.beta_b <= 0:
            raise ConfigError("Beta inclusion hyperparameters must be positive")

    @property
    def prior_inclusion(self) -> float:
        return self.beta_a / (self.beta_a + self.beta_b)


@dataclass
class McmcControl:
    """Chain-control block: {chains, iters, burnin, thin, seed}."""

    chains: int = 2
    iters: int = 6000
    burnin: int = 3000
    thin: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.chains < 1 or self.iters < 1 or self.thin < 1:
            raise ConfigError("chains, iters and thin must be >= 1")
        if not 0 <= self.burnin < self.iters:
            raise ConfigError("burnin must satisfy 0 <= burnin < iters")

    @property
    def kept_per_chain(self) -> int:
        return (self.iters - self.burnin) // self.thin

    @property
    def total_kept(self) -> int:
        return self.kept_per_chain * self.chains


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    """Independent, reproducible stream for one chain."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chain)]))


def subject_rng(seed: int, tag: int) -> np.random.Generator:
    """Independent stream keyed by (seed, subject tag)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED, int(tag)]))


@dataclass
class ChainState:
    """Current parameter values of one chain; owned by that chain only."""

    params: dict
    iteration: int = 0
    rng: np.random.Generator = None


@dataclass
class SpikeSlabState:
    """Spike-and-slab block state, one entry per penalized coefficient.

    DS invariant: included[j] is False iff value[j] == 0.0 exactly.
    """

    value: np.ndarray
    included: np.ndarray
    pi: np.ndarray
    slab_var: np.ndarray
    family: str = "cs"

    @classmethod
    def initial(cls, n: int, cfg: SpikeSlabConfig) -> "SpikeSlabState":
        return cls(
            value=np.zeros(n),
            included=np.ones(n, dtype=bool),
            pi=np.full(n, cfg.prior_inclusion),
            slab_var=np.ones(n),
            family=cfg.family,
        )

    def copy(self) -> "SpikeSlabState":
        return SpikeSlabState(
            value=self.value.copy(),
            included=self.included.copy(),
            pi=self.pi.copy(),
            slab_var=self.slab_var.copy(),
            family=self.family,
        )


# ---------------------------------------------------------------------------
# Conjugate Gibbs blocks
# ---------------------------------------------------------------------------


def inverse_gamma_draw(rng: np.random.Generator, shape: float, rate: float) -> float:
    """One draw from IG(shape, rate), density prop. to x^-(shape+1) exp(-rate/x).

    Gamma draws under tiny shapes can underflow to zero; they are floored so
    the returned value stays finite (relevant only for vague hyperpriors).
    """
    g = max(float(rng.gamma(shape)), 1e-300)
    return float(rate / g)


def gibbs_sigma2(rng: np.random.Generator, residuals, shape: float, rate: float) -> float:
    """Conjugate residual-variance draw: IG(shape + n/2, rate + SSR/2)."""
    r = np.asarray(residuals, dtype=float)
    if r.size < 1:
        raise DataError("gibbs_sigma2 needs at least one residual")
    return inverse_gamma_draw(rng, shape + 0.5 * r.size, rate + 0.5 * float(np.dot(r, r)))


def gibbs_invwishart(
    rng: np.random.Generator, scatter, scale, df: float, n: int
) -> np.ndarray:
    """Conjugate covariance draw: InverseWishart(df + n, scale + scatter)."""
    scatter = np.asarray(scatter, dtype=float)
    scale = np.asarray(scale, dtype=float)
    if scatter.shape != scale.shape:
        raise DataError("scatter and scale matrices must have matching shapes")
    if not np.allclose(scatter, scatter.T, atol=1e-8):
        raise DataError("scatter matrix must be symmetric")
    d = scatter.shape[0]
    if df < d:
        raise ConfigError(f"inverse-Wishart df {df} below dimension {d}")
    post_scale = scale + scatter
    post_scale = 0.5 * (post_scale + post_scale.T)
    draw = stats.invwishart.rvs(df=df + n, scale=post_scale, random_state=rng)
    return np.atleast_2d(draw)


def gibbs_beta_inclusion(rng: np.random.Generator, included: bool, a: float, b: float) -> float:
    """Beta-Bernoulli conjugate update of one inclusion probability."""
    z = 1.0 if included else 0.0
    return float(rng.beta(a + z, b + 1.0 - z))


# ---------------------------------------------------------------------------
# Random-walk Metropolis-Hastings with burn-in adaptation
# ---------------------------------------------------------------------------


@dataclass
class AdaptiveScale:
    """Robbins-Monro proposal-scale adaptation, frozen once burn-in ends."""

    scale: float = 0.5
    target: float = SCALAR_TARGET_RATE
    frozen: bool = False
    _step: int = 0
    _accepted: int = 0
    _tried: int = 0

    def update(self, accepted: bool) -> None:
        self.update_rate(1.0 if accepted else 0.0, weight=1)

    def update_rate(self, rate: float, weight: int = 1) -> None:
        """Feed an observed acceptance rate (e.g. over a vectorized block)."""
        self._tried += weight
        self._accepted += rate * weight
        if self.frozen:
            return
        self._step += 1
        gain = 1.0 / self._step**0.6
        self.scale = float(self.scale * math.exp(gain * (rate - self.target)))
        self.scale = min(max(self.scale, 1e-8), 1e4)

    def freeze(self) -> None:
        self.frozen = True

    @property
    def acceptance_rate(self) -> float:
        return self._accepted / self._tried if self._tried else float("nan")


def mh_block(rng: np.random.Generator, x, log_target, scale: AdaptiveScale, current_logp=None):
    """One Gaussian random-walk MH update of a scalar or vector block.

    Returns (x_new, logp_new, accepted).  Raises NumericalError if the target
    is NaN at the current state.
    """
    x = np.asarray(x, dtype=float)
    if current_logp is None:
        current_logp = float(log_target(x))
    if math.isnan(current_logp):
        raise NumericalError("log target is NaN at the current state")
    proposal = x + scale.scale * rng.standard_normal(x.shape)
    logp_prop = float(log_target(proposal))
    if math.isnan(logp_prop):
        raise NumericalError("log target is NaN at a proposed state")
    accepted = math.log(rng.random()) < logp_prop - current_logp
    scale.update(accepted)
    if accepted:
        return proposal, logp_prop, True
    return x, current_logp, False


# ---------------------------------------------------------------------------
# Spike-and-slab update kernels
# ---------------------------------------------------------------------------


def _log_normal_pdf(x: float, var: float) -> float:
    return -0.5 * (math.log(2.0 * math.pi * var) + x * x / var)


def _bernoulli_from_logits(rng, log_p1: float, log_p0: float) -> bool:
    m = max(log_p1, log_p0)
    p1 = math.exp(log_p1 - m)
    p1 = p1 / (p1 + math.exp(log_p0 - m))
    return rng.random() < p1


def cs_inclusion_probability(value: float, pi: float, slab_var: float, spike_var: float) -> float:
    """P(included | value): responsibility of the slab component."""
    log_slab = math.log(pi) + _log_normal_pdf(value, slab_var)
    log_spike = math.log1p(-pi) + _log_normal_pdf(value, spike_var)
    m = max(log_slab, log_spike)
    num = math.exp(log_slab - m)
    return num / (num + math.exp(log_spike - m))


def update_cs(
    rng: np.random.Generator,
    state: SpikeSlabState,
    j: int,
    loglik,
    cfg: SpikeSlabConfig,
    scale: AdaptiveScale,
) -> bool:
    """Continuous-spike sweep for coefficient j.

    Order: inclusion indicator (slab responsibility), inclusion probability
    (Beta), slab variance (inverse gamma, clamped above the spike variance),
    then a random-walk MH move of the value under the active component.
    `loglik` maps a candidate value to the data log-likelihood (any constant
    offset is irrelevant).  Returns the MH acceptance flag.
    """
    v = float(state.value[j])
    p_incl = cs_inclusion_probability(v, float(state.pi[j]), float(state.slab_var[j]), cfg.spike_var)
    included = rng.random() < p_incl
    state.included[j] = included
    state.pi[j] = gibbs_beta_inclusion(rng, included, cfg.beta_a, cfg.beta_b)

    if included:
        slab_var = inverse_gamma_draw(rng, cfg.slab_shape + 0.5, cfg.slab_rate + 0.5 * v * v)
    else:
        slab_var = inverse_gamma_draw(rng, cfg.slab_shape, cfg.slab_rate)
    if slab_var <= cfg.spike_var:
        slab_var = cfg.spike_var * (1.0 + 1e-6)
        warnings.warn(
            "slab variance draw fell below the spike variance; clamped",
            RuntimeWarning,
            stacklevel=2,
        )
    state.slab_var[j] = slab_var

    prior_var = slab_var if included else cfg.spike_var

    def log_target(x):
        return loglik(float(x)) + _log_normal_pdf(float(x), prior_var)

    new_v, _, accepted = mh_block(rng, np.array(v), log_target, scale)
    state.value[j] = float(new_v)
    return accepted


def laplace_pseudo_prior(loglik, slab_var: float, newton_steps: int = 3, h: float = 1e-4):
    """Gaussian (mode, variance) approximation of loglik + slab prior at its mode.

    Uses central finite differences; the target is the conditional posterior
    of one coefficient under the slab, so curvature is bounded below by the
    prior precision.
    """
    m = 0.0
    for _ in range(newton_steps):
        f0 = loglik(m)
        fp = loglik(m + h)
        fm = loglik(m - h)
        grad = (fp - fm) / (2.0 * h) - m / slab_var
        curv = (fp - 2.0 * f0 + fm) / (h * h) - 1.0 / slab_var
        if not math.isfinite(grad) or not math.isfinite(curv) or curv >= 0:
            break
        step = -grad / curv
        step = max(-5.0, min(5.0, step))
        m = m + step
    f0 = loglik(m)
    fp = loglik(m + h)
    fm = loglik(m - h)
    curv = (fp - 2.0 * f0 + fm) / (h * h) - 1.0 / slab_var
    var = -1.0 / curv if (math.isfinite(curv) and curv < 0) else slab_var
    # curvature includes the prior precision, so the variance never exceeds
    # the slab variance except through finite-difference noise
    var = min(var, slab_var)
    return m, var


def update_ds(
    rng: np.random.Generator,
    state: SpikeSlabState,
    j: int,
    loglik,
    cfg: SpikeSlabConfig,
    scale: AdaptiveScale,
    pseudo=None,
) -> bool:
    """Dirac-spike sweep for coefficient j.

    The trans-dimensional move toggles the indicator, drawing the coefficient
    from (or absorbing it into) a Gaussian pseudo-prior centered at the
    conditional mode; within the slab the value is refreshed by random-walk
    MH; the inclusion probability and slab variance update conjugately.
    `pseudo` optionally supplies the (mode, variance) pair.
    """
    pi = float(state.pi[j])
    slab_var = float(state.slab_var[j])
    if pseudo is None:
        pseudo = laplace_pseudo_prior(loglik, slab_var)
    q_mean, q_var = pseudo
    q_var = max(q_var, 1e-12)

    included = bool(state.included[j])
    v = float(state.value[j])
    log_odds_incl = math.log(pi) - math.log1p(-pi)

    if not included:
        v_star = q_mean + math.sqrt(q_var) * rng.standard_normal()
        log_ratio = (
            loglik(v_star)
            - loglik(0.0)
            + _log_normal_pdf(v_star, slab_var)
            + log_odds_incl
            - _log_normal_pdf(v_star - q_mean, q_var)
        )
        if math.log(rng.random()) < log_ratio:
            included, v = True, v_star
    else:
        log_ratio = (
            loglik(0.0)
            - loglik(v)
            - _log_normal_pdf(v, slab_var)
            - log_odds_incl
            + _log_normal_pdf(v - q_mean, q_var)
        )
        if math.log(rng.random()) < log_ratio:
            included, v = False, 0.0

    accepted = False
    if included:
        def log_target(x):
            return loglik(float(x)) + _log_normal_pdf(float(x), slab_var)

        new_v, _, accepted = mh_block(rng, np.array(v), log_target, scale)
        v = float(new_v)

    state.included[j] = included
    state.value[j] = v if included else 0.0
    state.pi[j] = gibbs_beta_inclusion(rng, included, cfg.beta_a, cfg.beta_b)
    if included:
        state.slab_var[j] = inverse_gamma_draw(
            rng, cfg.slab_shape + 0.5, cfg.slab_rate + 0.5 * v * v
        )
    else:
        state.slab_var[j] = inverse_gamma_draw(rng, cfg.slab_shape, cfg.slab_rate)
    return accepted


# ---------------------------------------------------------------------------
# Convergence diagnostics
# ---------------------------------------------------------------------------


def split_rhat(draws: np.ndarray) -> float:
    """Split-R-hat of one parameter; `draws` has shape (chains, iterations)."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    n = draws.shape[1]
    if n < 4:
        return float("nan")
    half = n // 2
    halves = np.concatenate([draws[:, :half], draws[:, half : 2 * half]], axis=0)
    m, n_half = halves.shape
    chain_means = halves.mean(axis=1)
    chain_vars = halves.var(axis=1, ddof=1)
    w = chain_vars.mean()
    b = n_half * chain_means.var(ddof=1)
    if w <= 0:
        return 1.0 if b <= 1e-300 else float("inf")
    var_plus = (n_half - 1) / n_half * w + b / n_half
    return float(math.sqrt(var_plus / w))
