"""Conjugate-block, adaptive-MH and spike-and-slab kernel tests."""

import numpy as np
import pytest
from scipy import stats

from jointvs.errors import ConfigError, DataError, NumericalError
from jointvs.samplers import (
    AdaptiveScale,
    SpikeSlabConfig,
    SpikeSlabState,
    chain_rng,
    cs_inclusion_probability,
    gibbs_beta_inclusion,
    gibbs_invwishart,
    gibbs_sigma2,
    inverse_gamma_draw,
    mh_block,
    split_rhat,
    update_cs,
    update_ds,
)


class TestGibbsSigma2:
    def test_empty_residuals_rejected(self):
        with pytest.raises(DataError):
            gibbs_sigma2(np.random.default_rng(0), np.empty(0), 1.0, 1.0)

    def test_zero_residual_posterior_mean(self):
        # prior (1, 1), n=10 zero residuals -> IG(6, 1) with mean 1/5
        rng = np.random.default_rng(11)
        draws = np.array([gibbs_sigma2(rng, np.zeros(10), 1.0, 1.0) for _ in range(100_000)])
        ig_mean = 1.0 / 5.0
        ig_sd = np.sqrt(1.0 / (25.0 * 4.0))
        mc_se = ig_sd / np.sqrt(draws.size)
        assert abs(draws.mean() - ig_mean) < 3 * mc_se

    def test_doubling_ssr_doubles_scale(self):
        r1 = np.full(4, 1.0)
        r2 = np.full(8, 1.0)  # SSR doubles, same shape contribution differs; use explicit rates
        d1 = gibbs_sigma2(np.random.default_rng(5), r1, 2.0, 0.0)
        d2 = gibbs_sigma2(np.random.default_rng(5), np.sqrt(2.0) * r1, 2.0, 0.0)
        # same gamma draw, scale parameter (rate) doubled exactly
        assert d2 == pytest.approx(2.0 * d1, rel=1e-15)
        assert r2.size == 8  # silence lint on r2

    def test_ks_against_analytic_full_conditional(self):
        rng = np.random.default_rng(21)
        resid = np.array([0.5, -1.0, 0.3, 0.9, -0.2])
        a, b = 2.0, 1.5
        draws = np.array([gibbs_sigma2(rng, resid, a, b) for _ in range(10_000)])
        post_shape = a + resid.size / 2
        post_rate = b + 0.5 * np.dot(resid, resid)
        ks = stats.kstest(draws, stats.invgamma(post_shape, scale=post_rate).cdf).statistic
        assert ks < 0.02


class TestGibbsInvWishart:
    def test_prior_draw_when_no_data(self):
        rng = np.random.default_rng(3)
        draw = gibbs_invwishart(rng, np.zeros((2, 2)), np.eye(2), df=4.0, n=0)
        assert draw.shape == (2, 2)
        assert np.all(np.linalg.eigvalsh(draw) > 0)

    def test_asymmetric_scatter_rejected(self):
        with pytest.raises(DataError):
            gibbs_invwishart(np.random.default_rng(0), np.array([[1.0, 0.5], [0.0, 1.0]]),
                             np.eye(2), df=4.0, n=1)

    def test_df_below_dimension_rejected(self):
        with pytest.raises(ConfigError):
            gibbs_invwishart(np.random.default_rng(0), np.eye(3), np.eye(3), df=2.0, n=0)

    def test_dimension_one_reduces_to_inverse_gamma(self):
        rng = np.random.default_rng(17)
        scatter = np.array([[3.0]])
        scale = np.array([[1.0]])
        df, n = 5.0, 4
        draws = np.array(
            [gibbs_invwishart(rng, scatter, scale, df, n)[0, 0] for _ in range(10_000)]
        )
        # IW_1(nu, s) == IG(nu/2, s/2)
        ig = stats.invgamma((df + n) / 2.0, scale=(scale + scatter)[0, 0] / 2.0)
        assert stats.kstest(draws, ig.cdf).statistic < 0.02

    def test_elementwise_mean_matches_analytic(self):
        rng = np.random.default_rng(29)
        scatter = np.array([[2.0, 0.3], [0.3, 1.0]])
        scale = np.eye(2)
        df, n = 6.0, 4
        m = 100_000
        draws = stats.invwishart.rvs(df=df + n, scale=scale + scatter, size=m, random_state=rng)
        want = (scale + scatter) / (df + n - 2 - 1)
        got = draws.mean(axis=0)
        # MC standard error per element from the sample itself
        se = draws.std(axis=0) / np.sqrt(m)
        assert np.all(np.abs(got - want) < 4 * se)
        # one draw through our wrapper agrees in distribution family (smoke)
        one = gibbs_invwishart(rng, scatter, scale, df, n)
        assert one.shape == (2, 2)


class TestMhBlock:
    def test_zero_scale_always_accepts(self):
        rng = np.random.default_rng(0)
        scale = AdaptiveScale(scale=0.0)
        scale.freeze()
        x, logp, accepted = mh_block(rng, np.array(1.3), lambda v: -0.5 * float(v) ** 2, scale)
        assert accepted
        assert float(x) == pytest.approx(1.3)

    def test_nan_target_raises(self):
        rng = np.random.default_rng(0)
        with pytest.raises(NumericalError):
            mh_block(rng, np.array(0.0), lambda v: float("nan"), AdaptiveScale())

    def test_standard_normal_target_moments(self):
        rng = np.random.default_rng(123)
        scale = AdaptiveScale(scale=1.0, target=0.44)
        x = np.array(0.0)
        logp = None
        burn = 20_000
        for _ in range(burn):
            x, logp, _ = mh_block(rng, x, lambda v: -0.5 * float(v) ** 2, scale, logp)
        scale.freeze()
        draws = np.empty(100_000)
        for i in range(draws.size):
            x, logp, _ = mh_block(rng, x, lambda v: -0.5 * float(v) ** 2, scale, logp)
            draws[i] = float(x)
        assert abs(draws.mean()) < 0.02
        assert abs(draws.var() - 1.0) < 0.05
        assert 0.15 <= scale.acceptance_rate <= 0.5


CFG = SpikeSlabConfig(family="cs", spike_var=1e-3)


class TestUpdateCs:
    def test_inclusion_probability_matches_density_ratio_oracle(self):
        # two-component density-ratio oracle at value 0 with pi=0.5
        p_incl = cs_inclusion_probability(0.0, 0.5, 1.0, 1e-3)
        num = stats.norm.pdf(0.0, scale=1.0)
        den = stats.norm.pdf(0.0, scale=np.sqrt(1e-3))
        oracle_spike = den / (den + num)
        assert 1.0 - p_incl == pytest.approx(oracle_spike, rel=1e-12)
        assert 1.0 - p_incl == pytest.approx(0.969, abs=5e-4)

    def test_spike_probability_empirical(self):
        rng = np.random.default_rng(31)
        spike_count = 0
        trials = 20_000
        for _ in range(trials):
            state = SpikeSlabState(
                value=np.array([0.0]), included=np.array([True]), pi=np.array([0.5]),
                slab_var=np.array([1.0]), family="cs",
            )
            scale = AdaptiveScale(scale=0.3)
            scale.freeze()
            update_cs(rng, state, 0, lambda v: 0.0, CFG, scale)
            spike_count += int(not state.included[0])
        want = 1.0 - cs_inclusion_probability(0.0, 0.5, 1.0, 1e-3)
        se = np.sqrt(want * (1 - want) / trials)
        assert abs(spike_count / trials - want) < 4 * se

    def test_far_tail_value_never_in_spike(self):
        p_incl = cs_inclusion_probability(3.0, 0.5, 1.0, 1e-3)
        assert p_incl == 1.0

    def test_pi_full_conditional_is_beta(self):
        rng = np.random.default_rng(5)
        # included=True with a=b=1 -> Beta(2, 1), cdf x^2
        draws = np.array([gibbs_beta_inclusion(rng, True, 1.0, 1.0) for _ in range(10_000)])
        ks = stats.kstest(draws, lambda x: np.clip(x, 0, 1) ** 2).statistic
        assert ks < 0.02

    def test_slab_variance_clamped_above_spike(self):
        rng = np.random.default_rng(2)
        cfg = SpikeSlabConfig(family="cs", spike_var=1e-3, slab_shape=1e6, slab_rate=1.0)
        # huge shape, tiny rate forces slab draws ~ 1e-6 < spike_var
        state = SpikeSlabState(
            value=np.array([0.0]), included=np.array([True]), pi=np.array([0.5]),
            slab_var=np.array([1.0]), family="cs",
        )
        scale = AdaptiveScale(scale=0.3)
        with pytest.warns(RuntimeWarning, match="clamped"):
            update_cs(rng, state, 0, lambda v: 0.0, cfg, scale)
        assert state.slab_var[0] > cfg.spike_var


class TestUpdateDs:
    def run_chain(self, loglik, sweeps, seed=0, cfg=None):
        cfg = cfg or SpikeSlabConfig(family="ds")
        rng = np.random.default_rng(seed)
        state = SpikeSlabState(
            value=np.array([0.0]), included=np.array([False]), pi=np.array([0.5]),
            slab_var=np.array([1.0]), family="ds",
        )
        scale = AdaptiveScale(scale=0.5)
        incl = np.empty(sweeps, dtype=bool)
        vals = np.empty(sweeps)
        for t in range(sweeps):
            update_ds(rng, state, 0, loglik, cfg, scale)
            incl[t] = state.included[0]
            vals[t] = state.value[0]
        return incl, vals

    def test_exclusion_forces_exact_zero(self):
        incl, vals = self.run_chain(lambda v: 0.0, 4000, seed=9)
        assert np.all(vals[~incl] == 0.0)
        assert np.all(vals[incl] != 0.0)

    def test_flat_likelihood_recovers_prior_inclusion(self):
        incl, _ = self.run_chain(lambda v: 0.0, 30_000, seed=10)
        # prior inclusion mass a/(a+b) = 0.5; generous band for chain autocorrelation
        assert abs(incl.mean() - 0.5) < 0.03

    def test_strong_peak_keeps_coefficient_included(self):
        # sharply peaked likelihood at 2: Laplace/BF oracle predicts inclusion
        # probability indistinguishable from 1
        curv = 100.0
        loglik = lambda v: -0.5 * curv * (v - 2.0) ** 2
        incl, vals = self.run_chain(loglik, 4000, seed=11)
        post = incl[1000:]
        assert post.mean() > 0.99
        assert abs(np.mean(vals[incl][100:]) - 2.0) < 0.1

    def test_bayes_factor_oracle_moderate_peak(self):
        # Unit-curvature likelihood peak at 2.  The slab marginal likelihood
        # is a Gaussian convolution, exp(-2/(1+s2))/sqrt(1+s2), which
        # integrated over the vague IG(0.01, 0.01) hyperprior gives the exact
        # posterior inclusion probability; the chain occupancy must match it.
        from scipy import integrate

        loglik = lambda v: -0.5 * (v - 2.0) ** 2
        incl, _ = self.run_chain(loglik, 60_000, seed=12)

        def integrand(log_s2):
            s2 = np.exp(log_s2)
            dens = stats.invgamma.pdf(s2, 0.01, scale=0.01) * s2
            return np.exp(-2.0 / (1.0 + s2)) / np.sqrt(1.0 + s2) * dens

        slab_marginal, _ = integrate.quad(integrand, -40, 700, limit=500)
        oracle = slab_marginal / (slab_marginal + np.exp(-2.0))
        assert incl.mean() == pytest.approx(oracle, abs=0.02)


class TestSplitRhat:
    def test_identical_chains_near_one(self):
        rng = np.random.default_rng(0)
        draws = rng.standard_normal((2, 2000))
        assert abs(split_rhat(draws) - 1.0) < 0.05

    def test_disjoint_chains_flagged(self):
        rng = np.random.default_rng(0)
        draws = np.stack([rng.standard_normal(1000), 10 + rng.standard_normal(1000)])
        assert split_rhat(draws) > 1.5


def test_chain_determinism():
    a = chain_rng(42, 0).standard_normal(5)
    b = chain_rng(42, 0).standard_normal(5)
    c = chain_rng(42, 1).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
