"""Scenario generator tests: covariance structure, event sampling, masks."""

import numpy as np
import pytest
from scipy import stats

from jointvs.errors import ConfigError
from jointvs.simgen import (
    ScenarioConfig,
    build_covariance,
    cumulative_hazard_linear_exponent,
    effect_vectors,
    invert_cumulative_hazard,
    simulate_dataset,
    split_train_validation,
)


class TestBuildCovariance:
    def test_rho_zero_block_diagonal_eigenvalues(self):
        cov = build_covariance(0.0, 10)
        eig = np.sort(np.linalg.eigvalsh(cov))
        np.testing.assert_allclose(eig[:10], 0.5, atol=1e-12)
        np.testing.assert_allclose(eig[10:], 1.5, atol=1e-12)

    @pytest.mark.parametrize("rho", [0.1, 0.7])
    def test_paper_rhos_positive_definite(self, rho):
        cov = build_covariance(rho, 10)
        assert np.min(np.linalg.eigvalsh(cov)) > 0
        np.testing.assert_allclose(cov, cov.T)

    def test_invalid_rho_raises_naming_rho(self):
        with pytest.raises(ConfigError, match="0.99"):
            build_covariance(0.99, 10)


class TestEffectPatterns:
    def test_common_pattern_masks(self):
        cfg = ScenarioConfig(n_subjects=10, pattern="common", alpha_star=1.0, gamma_star=0.5)
        alphas, gammas = effect_vectors(cfg)
        np.testing.assert_array_equal(alphas[0], alphas[1])
        assert alphas[0].tolist() == [-1, -1, 1, 1, 0, 0, 0, 0, 0, 0]
        assert gammas[0][0] == 0.5 and gammas[0][1] == -0.5
        assert gammas[0][12] == 0.5 and gammas[0][13] == -0.5
        assert np.count_nonzero(gammas[0]) == 4

    def test_single_cause_1_zeroes_cause_2_markers(self):
        cfg = ScenarioConfig(n_subjects=10, pattern="single-cause-1")
        alphas, gammas = effect_vectors(cfg)
        assert np.all(alphas[1] == 0.0)
        assert np.any(alphas[0] != 0.0)
        np.testing.assert_array_equal(gammas[0], gammas[1])

    def test_opposite_pattern_negates(self):
        cfg = ScenarioConfig(n_subjects=10, pattern="opposite")
        alphas, gammas = effect_vectors(cfg)
        np.testing.assert_array_equal(alphas[0], -alphas[1])
        np.testing.assert_array_equal(gammas[0], -gammas[1])

    def test_truth_masks_match_pattern(self):
        for pattern in ("common", "single-cause-1", "single-both", "opposite"):
            cfg = ScenarioConfig(n_subjects=20, pattern=pattern)
            _, truth = simulate_dataset(cfg, seed=1)
            alphas, gammas = effect_vectors(cfg)
            np.testing.assert_array_equal(np.array(truth["marker_mask"]), alphas != 0)
            np.testing.assert_array_equal(np.array(truth["covariate_mask"]), gammas != 0)


class TestEventTimeInversion:
    def test_bisection_matches_analytic_inverse(self):
        lam0, a, bslope = 0.2, 0.4, 0.9
        targets = np.array([0.05, 0.3, 1.0, 2.5])
        got = invert_cumulative_hazard(
            lambda t: cumulative_hazard_linear_exponent(lam0, a, bslope, t), targets
        )
        want = np.log1p(bslope * targets / (lam0 * np.exp(a))) / bslope
        np.testing.assert_allclose(got, want, atol=1e-8)

    def test_negative_slope_can_escape_event(self):
        lam0, a, bslope = 0.1, 0.0, -2.0
        # Lambda(inf) = lam0/|b| = 0.05 < 0.5 -> no event
        got = invert_cumulative_hazard(
            lambda t: cumulative_hazard_linear_exponent(lam0, a, bslope, t), np.array([0.5])
        )
        assert np.isinf(got[0])

    def test_zero_slope_reduces_to_exponential(self):
        got = invert_cumulative_hazard(
            lambda t: cumulative_hazard_linear_exponent(0.25, 0.0, 0.0, t), np.array([1.0])
        )
        assert got[0] == pytest.approx(4.0, abs=1e-8)


class TestSimulateDataset:
    def test_null_effects_decouple_effects_from_event_times(self):
        cfg = ScenarioConfig(
            n_subjects=1000, alpha_star=0.0, gamma_star=0.0, baseline_heights=(0.3, 0.2)
        )
        ds, truth = simulate_dataset(cfg, seed=3)
        b = np.array(truth["random_effects"])
        intercept_sum = b[:, 0::2].sum(axis=1)
        r = stats.spearmanr(intercept_sum, ds.event_times()).statistic
        assert abs(r) < 0.1

    def test_doubling_baselines_roughly_doubles_incidence(self):
        base = dict(
            n_subjects=8000, alpha_star=0.0, gamma_star=0.0,
            censor_low=None, censor_high=None, admin_censor=2.0,
        )
        cfg1 = ScenarioConfig(baseline_heights=(0.03, 0.03), **base)
        cfg2 = ScenarioConfig(baseline_heights=(0.06, 0.06), **base)
        _, t1 = simulate_dataset(cfg1, seed=5)
        _, t2 = simulate_dataset(cfg2, seed=5)
        rate1 = t1["event_rates"]["cause_1"] + t1["event_rates"]["cause_2"]
        rate2 = t2["event_rates"]["cause_1"] + t2["event_rates"]["cause_2"]
        assert rate2 == pytest.approx(2.0 * rate1, rel=0.15)

    def test_marginal_variance_at_baseline(self):
        cfg = ScenarioConfig(n_subjects=1000, sigma2=0.5)
        ds, _ = simulate_dataset(cfg, seed=11)
        y0 = np.array([s.values[0][0] for s in ds.subjects])  # marker 1 at s=0
        assert np.var(y0) == pytest.approx(1.0 + cfg.sigma2, rel=0.10)

    def test_cumulative_incidence_matches_competing_exponentials(self):
        lam = (0.3, 0.2)
        cfg = ScenarioConfig(
            n_subjects=5000, alpha_star=0.0, gamma_star=0.0, baseline_heights=lam,
            censor_low=None, censor_high=None, admin_censor=None, grid_end=2.0,
        )
        ds, _ = simulate_dataset(cfg, seed=13)
        t = ds.event_times()
        d = ds.causes()
        total = sum(lam)
        grid = np.linspace(0.01, 6.0, 80)
        for l, lam_l in enumerate(lam, start=1):
            emp = np.array([np.mean((t <= g) & (d == l)) for g in grid])
            ana = lam_l / total * (1.0 - np.exp(-total * grid))
            assert np.max(np.abs(emp - ana)) < 0.03

    def test_measurements_truncated_at_event_time(self):
        cfg = ScenarioConfig(n_subjects=200)
        ds, _ = simulate_dataset(cfg, seed=7)
        for s in ds.subjects:
            for tarr in s.times:
                assert tarr.size >= 1
                assert np.all(tarr <= s.event_time + 1e-12)

    def test_event_rates_in_calibration_band_common_scenario(self):
        # default heights should give roughly 25-35% cause 1, 20-30% cause 2
        cfg = ScenarioConfig(n_subjects=4000, sigma2=0.5, rho=0.1,
                             alpha_star=1.0, gamma_star=1.0)
        _, truth = simulate_dataset(cfg, seed=17)
        assert 0.25 <= truth["event_rates"]["cause_1"] <= 0.35
        assert 0.20 <= truth["event_rates"]["cause_2"] <= 0.30


class TestSplit:
    def test_empty_validation(self):
        cfg = ScenarioConfig(n_subjects=30)
        ds, _ = simulate_dataset(cfg, seed=1)
        train, valid, _, _ = split_train_validation(ds, (1.0, 0.0), seed=2)
        assert train.n_subjects == 30
        assert valid.n_subjects == 0 or valid.n_subjects == 0

    def test_paper_sized_split(self):
        cfg = ScenarioConfig(n_subjects=1000)
        ds, _ = simulate_dataset(cfg, seed=1)
        train, valid, _, _ = split_train_validation(ds, (0.5, 0.5), seed=2)
        assert train.n_subjects == 500
        assert valid.n_subjects == 500

    def test_union_of_ids_preserved(self):
        cfg = ScenarioConfig(n_subjects=101)
        ds, _ = simulate_dataset(cfg, seed=1)
        train, valid, ti, vi = split_train_validation(ds, (0.3, 0.7), seed=9)
        ids = {s.id for s in train.subjects} | {s.id for s in valid.subjects}
        assert ids == {s.id for s in ds.subjects}
        assert set(ti).isdisjoint(set(vi))

    def test_reproducible(self):
        cfg = ScenarioConfig(n_subjects=50)
        ds, _ = simulate_dataset(cfg, seed=1)
        a = split_train_validation(ds, (0.5, 0.5), seed=4)
        b = split_train_validation(ds, (0.5, 0.5), seed=4)
        assert [s.id for s in a[0].subjects] == [s.id for s in b[0].subjects]


def test_same_seed_bitwise_identical():
    cfg = ScenarioConfig(n_subjects=40)
    d1, t1 = simulate_dataset(cfg, seed=21)
    d2, t2 = simulate_dataset(cfg, seed=21)
    np.testing.assert_array_equal(d1.event_times(), d2.event_times())
    for s1, s2 in zip(d1.subjects, d2.subjects):
        for a, b in zip(s1.values, s2.values):
            np.testing.assert_array_equal(a, b)
    assert t1["random_effects"] == t2["random_effects"]
