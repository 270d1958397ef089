"""Baseline, hazard, quadrature and survival-likelihood tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from jointvs.errors import DataError
from jointvs.hazard import (
    HazardParams,
    PiecewiseBaseline,
    PolynomialTrajectories,
    SubjectQuadrature,
    baseline_at,
    cause_hazard,
    cumulative_hazard,
    segment_panels,
    survival_loglik,
)
from jointvs.longitudinal import SubjectRecord


def constant_params(lams, horizon=10.0, n_covariates=1, n_markers=1):
    """Hazard params with constant baselines and zero coefficients."""
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    bl = PiecewiseBaseline(knots=[0.0, horizon], heights=lams[:, None])
    return HazardParams(
        gammas=np.zeros((lams.size, n_covariates)),
        alphas=np.zeros((lams.size, n_markers)),
        baseline=bl,
    )


def flat_traj(n_subjects=1, n_markers=1):
    return PolynomialTrajectories(np.zeros((n_subjects, n_markers, 2)))


def identity_traj(n_subjects=1):
    # eta(t) = t for a single marker
    coeffs = np.zeros((n_subjects, 1, 2))
    coeffs[:, 0, 1] = 1.0
    return PolynomialTrajectories(coeffs)


class TestBaselineAt:
    def test_single_interval(self):
        bl = PiecewiseBaseline(knots=[0.0, 2.0], heights=[[0.1]])
        assert baseline_at(bl, 0, 1.3) == 0.1

    def test_right_closed_intervals_against_membership_oracle(self):
        bl = PiecewiseBaseline(knots=[0.0, 1.0, 2.0], heights=[[0.1, 0.3]])
        assert baseline_at(bl, 0, 1.0) == 0.1
        knots = np.array([0.0, 1.0, 2.0])
        heights = np.array([0.1, 0.3])
        for t in np.linspace(0.0, 2.0, 401):
            # oracle: first interval k with t <= knots[k+1], except t=0 -> interval 0
            k = 0 if t == 0 else int(np.nonzero((t > knots[:-1]) & (t <= knots[1:]))[0][0])
            assert baseline_at(bl, 0, float(t)) == heights[k]

    def test_last_knot_maps_to_last_height(self):
        bl = PiecewiseBaseline(knots=[0.0, 1.0, 2.0], heights=[[0.1, 0.3]])
        assert baseline_at(bl, 0, 2.0) == 0.3

    def test_beyond_last_knot_rejected(self):
        bl = PiecewiseBaseline(knots=[0.0, 2.0], heights=[[0.1]])
        with pytest.raises(DataError):
            baseline_at(bl, 0, 2.5)

    def test_invalid_construction(self):
        with pytest.raises(DataError):
            PiecewiseBaseline(knots=[0.0, 1.0], heights=[[0.0]])
        with pytest.raises(DataError):
            PiecewiseBaseline(knots=[0.5, 1.0], heights=[[0.1]])
        with pytest.raises(DataError):
            PiecewiseBaseline(knots=[0.0, 1.0, 0.5], heights=[[0.1, 0.1]])


class TestCauseHazard:
    def test_null_effects_reduce_to_baseline(self):
        p = constant_params([0.1, 0.2])
        traj = flat_traj()
        for t in (0.0, 1.0, 7.5):
            assert cause_hazard(p, traj, 0, 0, t, [0.0]) == pytest.approx(0.1)
            assert cause_hazard(p, traj, 0, 1, t, [0.0]) == pytest.approx(0.2)

    def test_log2_covariate_doubles(self):
        p = constant_params([0.1])
        p = HazardParams(gammas=[[np.log(2.0)]], alphas=[[0.0]], baseline=p.baseline)
        assert cause_hazard(p, flat_traj(), 0, 0, 1.0, [1.0]) == pytest.approx(0.2, rel=1e-12)

    def test_association_exponent_scalar_oracle(self):
        bl = PiecewiseBaseline(knots=[0.0, 10.0], heights=[[0.1]])
        p = HazardParams(gammas=[[0.0]], alphas=[[0.5]], baseline=bl)
        got = cause_hazard(p, identity_traj(), 0, 0, 2.0, [0.0])
        assert got == pytest.approx(0.1 * np.exp(0.5 * 2.0), rel=1e-12)

    @settings(max_examples=30)
    @given(c=st.floats(-3, 3), t=st.floats(0, 5))
    def test_multiplicative_in_covariate_shift(self, c, t):
        bl = PiecewiseBaseline(knots=[0.0, 5.0], heights=[[0.4]])
        base = HazardParams(gammas=[[0.7]], alphas=[[0.0]], baseline=bl)
        shifted = HazardParams(gammas=[[0.7 + c]], alphas=[[0.0]], baseline=bl)
        h0 = cause_hazard(base, flat_traj(), 0, 0, t, [1.0])
        h1 = cause_hazard(shifted, flat_traj(), 0, 0, t, [1.0])
        assert h1 == pytest.approx(np.exp(c) * h0, rel=1e-12)


def exp_linear_closed_form(lam0, a, bslope, t):
    """Integral of lam0*exp(a + b*u) over [0, t]."""
    if bslope == 0:
        return lam0 * np.exp(a) * t
    return lam0 * np.exp(a) * (np.exp(bslope * t) - 1.0) / bslope


class TestCumulativeHazard:
    def test_constant_hazard(self):
        p = constant_params([0.1])
        assert cumulative_hazard(p, flat_traj(), 0, 0, 2.0, [0.0]) == pytest.approx(0.2, rel=1e-12)

    def test_zero_horizon(self):
        p = constant_params([0.1])
        assert cumulative_hazard(p, flat_traj(), 0, 0, 0.0, [0.0]) == 0.0

    @pytest.mark.parametrize("a,bslope", [(0.3, 0.8), (-1.0, -0.5), (0.0, 1.5), (0.5, 0.0)])
    def test_exp_linear_closed_form(self, a, bslope):
        # exponent a + b*t via one covariate (gamma=a) and alpha*eta with eta(t)=t
        bl = PiecewiseBaseline(knots=[0.0, 0.7, 1.9, 3.0], heights=[[0.2, 0.2, 0.2]])
        p = HazardParams(gammas=[[a]], alphas=[[bslope]], baseline=bl)
        for t in (0.4, 1.0, 2.7, 3.0):
            got = cumulative_hazard(p, identity_traj(), 0, 0, t, [1.0])
            want = exp_linear_closed_form(0.2, a, bslope, t)
            assert got == pytest.approx(want, rel=1e-8)

    def test_beyond_last_knot_rejected(self):
        p = constant_params([0.1], horizon=2.0)
        with pytest.raises(DataError):
            cumulative_hazard(p, flat_traj(), 0, 0, 2.5, [0.0])

    def test_monotone_and_derivative_matches_hazard(self):
        bl = PiecewiseBaseline(knots=[0.0, 1.0, 2.5, 4.0], heights=[[0.2, 0.35, 0.15]])
        p = HazardParams(gammas=[[0.4]], alphas=[[0.3]], baseline=bl)
        traj = identity_traj()
        ts = np.linspace(0.05, 3.9, 40)
        vals = [cumulative_hazard(p, traj, 0, 0, float(t), [1.0]) for t in ts]
        assert np.all(np.diff(vals) > 0)
        h = 1e-5
        for t in (0.5, 1.7, 3.1):  # interior points away from knots
            num = (
                cumulative_hazard(p, traj, 0, 0, t + h, [1.0])
                - cumulative_hazard(p, traj, 0, 0, t - h, [1.0])
            ) / (2 * h)
            assert num == pytest.approx(cause_hazard(p, traj, 0, 0, t, [1.0]), rel=1e-3)


def make_subject(i, t, cause, n_markers=1):
    return SubjectRecord(
        id=f"s{i}",
        event_time=t,
        cause=cause,
        covariates=np.array([1.0]),
        times=tuple(np.array([0.0]) for _ in range(n_markers)),
        values=tuple(np.array([0.0]) for _ in range(n_markers)),
    )


class TestSurvivalLoglik:
    def test_censored_constant_hazards(self):
        p = constant_params([0.1, 0.2])
        s = make_subject(0, 1.0, 0)
        assert survival_loglik(p, flat_traj(), 0, s) == pytest.approx(-0.3, rel=1e-12)

    def test_event_cause_one(self):
        p = constant_params([0.1, 0.2])
        s = make_subject(0, 1.0, 1)
        want = np.log(0.1) - 0.3
        assert survival_loglik(p, flat_traj(), 0, s) == pytest.approx(want, rel=1e-12)

    def test_against_adaptive_quadrature_oracle(self):
        rng = np.random.default_rng(7)
        n = 10
        bl = PiecewiseBaseline(knots=[0.0, 0.8, 1.6, 2.2], heights=[[0.2, 0.3, 0.25], [0.15, 0.1, 0.3]])
        gammas = rng.normal(scale=0.4, size=(2, 1))
        alphas = rng.normal(scale=0.4, size=(2, 2))
        coeffs = rng.normal(scale=0.5, size=(n, 2, 2))
        traj = PolynomialTrajectories(coeffs)
        p = HazardParams(gammas=gammas, alphas=alphas, baseline=bl)
        times = rng.uniform(0.1, 2.2, size=n)
        causes = rng.integers(0, 3, size=n)

        total = 0.0
        oracle = 0.0
        for i in range(n):
            subj = make_subject(i, times[i], int(causes[i]), n_markers=2)
            subj = SubjectRecord(
                id=subj.id, event_time=subj.event_time, cause=subj.cause,
                covariates=np.array([1.0]), times=subj.times, values=subj.values,
            )
            total += survival_loglik(p, traj, i, subj)
            contrib = 0.0
            for l in range(2):
                def hz(u, l=l, i=i):
                    eta = sum(
                        alphas[l, k] * (coeffs[i, k, 0] + coeffs[i, k, 1] * u) for k in range(2)
                    )
                    return baseline_at(bl, l, u) * np.exp(gammas[l, 0] * 1.0 + eta)

                if causes[i] == l + 1:
                    contrib += np.log(hz(times[i]))
                # integrate piecewise to keep quad happy at the jumps
                edges = [0.0] + [k for k in bl.knots[1:-1] if k < times[i]] + [times[i]]
                for lo, hi in zip(edges[:-1], edges[1:]):
                    val, _ = integrate.quad(hz, lo, hi, epsabs=1e-12, epsrel=1e-12)
                    contrib -= val
            oracle += contrib
        assert total == pytest.approx(oracle, rel=1e-6)


class TestSubjectQuadrature:
    def test_matches_scalar_cumulative_hazard(self):
        rng = np.random.default_rng(3)
        n = 12
        knots = np.array([0.0, 0.5, 1.3, 2.0])
        bl = PiecewiseBaseline(knots=knots, heights=[[0.2, 0.4, 0.1]])
        gammas = np.array([[0.3]])
        alphas = np.array([[0.6]])
        p = HazardParams(gammas=gammas, alphas=alphas, baseline=bl)
        coeffs = rng.normal(scale=0.4, size=(n, 1, 2))
        traj = PolynomialTrajectories(coeffs)
        times = rng.uniform(0.01, 2.0, size=n)
        quad = SubjectQuadrature(knots, times, n_nodes=15)
        omega = np.ones((n, 1))

        eta_nodes = np.einsum("nrd,nd->nr", np.stack(
            [np.ones_like(quad.nodes), quad.nodes], axis=-1), coeffs[:, 0, :])
        expo = (omega @ gammas[0])[:, None] + alphas[0, 0] * eta_nodes
        lam_idx = bl.heights[0, quad.interval]
        cum_vec = np.sum(quad.weights * lam_idx * np.exp(expo), axis=1)
        for i in range(n):
            want = cumulative_hazard(p, traj, i, 0, float(times[i]), [1.0])
            assert cum_vec[i] == pytest.approx(want, rel=1e-12)

    def test_padding_has_zero_weight(self):
        knots = np.array([0.0, 1.0, 2.0])
        quad = SubjectQuadrature(knots, np.array([0.5, 2.0]), n_nodes=5)
        assert np.all(quad.weights[0, 5:] == 0.0)
        assert np.all(quad.weights[1] != 0.0)

    def test_segment_panels_never_cross_knots(self):
        knots = np.array([0.0, 1.0, 2.0])
        times, weights, intervals = segment_panels(knots, 1.5, n_nodes=4)
        assert times.size == 8
        assert np.all(times[intervals == 0] <= 1.0)
        assert np.all((times[intervals == 1] >= 1.0) & (times[intervals == 1] <= 1.5))
        assert np.sum(weights) == pytest.approx(1.5, rel=1e-12)
