"""Linear predictor, Gaussian likelihood and CSV interchange tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from jointvs.errors import DataError, DimensionError
from jointvs.longitudinal import (
    LongitudinalDataset,
    MarkerModelSpec,
    SubjectRecord,
    linear_predictor,
    load_dataset,
    longitudinal_loglik,
    write_dataset,
)

LINEAR = MarkerModelSpec.from_trend("m1", "linear")
QUAD = MarkerModelSpec.from_trend("m2", "quadratic")


def matmul_oracle(spec, beta, b, s):
    # independent evaluation through explicit design matrices
    x = spec.fixed_design(np.array([s]))[0]
    z = spec.random_design(np.array([s]))[0]
    return float(np.dot(x, beta) + np.dot(z, b))


class TestLinearPredictor:
    def test_paper_truth_coefficients_cancel_at_one(self):
        assert linear_predictor(LINEAR, [-0.5, 0.5], [0.0, 0.0], 1.0) == 0.0

    def test_zero_coefficients(self):
        for spec in (LINEAR, QUAD):
            beta = np.zeros(spec.n_fixed)
            b = np.zeros(spec.n_random)
            for s in (0.0, 0.3, 2.0):
                assert linear_predictor(spec, beta, b, s) == 0.0

    def test_hand_evaluated_dot_product(self):
        got = linear_predictor(LINEAR, [-0.5, 0.5], [0.2, -0.1], 2.0)
        assert got == pytest.approx(0.5, abs=1e-15)
        assert got == pytest.approx(matmul_oracle(LINEAR, [-0.5, 0.5], [0.2, -0.1], 2.0))

    def test_dimension_mismatch_names_marker(self):
        with pytest.raises(DimensionError, match="m1"):
            linear_predictor(LINEAR, [1.0, 2.0, 3.0], [0.0, 0.0], 1.0)
        with pytest.raises(DimensionError, match="m1"):
            linear_predictor(LINEAR, [1.0, 2.0], [0.0], 1.0)

    @settings(max_examples=50)
    @given(
        beta1=st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
        beta2=st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
        b=st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
        a=st.floats(-3, 3),
        s=st.floats(0, 2),
    )
    def test_linearity_in_beta(self, beta1, beta2, b, a, s):
        beta1, beta2, b = np.array(beta1), np.array(beta2), np.array(b)
        lhs = linear_predictor(LINEAR, a * beta1 + beta2, b, s)
        rhs = (
            a * linear_predictor(LINEAR, beta1, b, s)
            + linear_predictor(LINEAR, beta2, np.zeros(2), s)
            + np.dot(LINEAR.random_design(np.array([s]))[0], b)
            - a * np.dot(LINEAR.random_design(np.array([s]))[0], b)
        )
        assert lhs == pytest.approx(rhs, abs=1e-9)


class TestLongitudinalLoglik:
    def test_zero_residual_single_point(self):
        got = longitudinal_loglik(LINEAR, [1.0], [0.0], [-0.5, 0.5], 1.0, [0.0, 0.0])
        assert got == pytest.approx(-0.5 * np.log(2 * np.pi), rel=1e-14)

    def test_additivity_over_identical_points(self):
        one = longitudinal_loglik(LINEAR, [1.0], [0.0], [-0.5, 0.5], 1.0, [0.0, 0.0])
        two = longitudinal_loglik(LINEAR, [1.0, 1.0], [0.0, 0.0], [-0.5, 0.5], 1.0, [0.0, 0.0])
        assert two == pytest.approx(2 * one, rel=1e-14)

    def test_closed_form_gaussian_density(self):
        # y=1, eta=0, sigma2=0.5 -> -0.5*log(pi) - 1
        got = longitudinal_loglik(LINEAR, [0.0], [1.0], [0.0, 0.0], 0.5, [0.0, 0.0])
        assert got == pytest.approx(-0.5 * np.log(np.pi) - 1.0, rel=1e-14)

    def test_nonpositive_variance_rejected(self):
        for bad in (0.0, -1.0):
            with pytest.raises(DataError):
                longitudinal_loglik(LINEAR, [0.0], [1.0], [0.0, 0.0], bad, [0.0, 0.0])

    @settings(max_examples=30)
    @given(
        gap=st.floats(0.1, 5),
        extra=st.floats(0.1, 5),
        sigma2=st.floats(0.1, 4),
    )
    def test_decreases_as_residual_grows(self, gap, extra, sigma2):
        base = longitudinal_loglik(LINEAR, [0.5], [gap], [0.0, 0.0], sigma2, [0.0, 0.0])
        worse = longitudinal_loglik(LINEAR, [0.5], [gap + extra], [0.0, 0.0], sigma2, [0.0, 0.0])
        assert worse < base

    def test_matches_density_product_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            n = rng.integers(1, 8)
            times = np.sort(rng.uniform(0, 2, n))
            values = rng.normal(size=n)
            beta = rng.normal(size=2)
            b = rng.normal(size=2)
            sigma2 = rng.uniform(0.2, 3.0)
            got = longitudinal_loglik(LINEAR, times, values, beta, sigma2, b)
            eta = beta[0] + beta[1] * times + b[0] + b[1] * times
            oracle = stats.norm.logpdf(values, loc=eta, scale=np.sqrt(sigma2)).sum()
            assert got == pytest.approx(oracle, rel=1e-10)


def tiny_dataset():
    markers = (MarkerModelSpec.from_trend("a", "linear"), MarkerModelSpec.from_trend("b", "linear"))
    subjects = (
        SubjectRecord(
            id="s1",
            event_time=1.5,
            cause=1,
            covariates=np.array([0.3, 1.0]),
            times=(np.array([0.0, 0.5]), np.array([0.0])),
            values=(np.array([1.0, 1.2]), np.array([-0.4])),
        ),
        SubjectRecord(
            id="s2",
            event_time=2.0,
            cause=0,
            covariates=np.array([-1.0, 0.0]),
            times=(np.array([0.0]), np.empty(0)),
            values=(np.array([0.1]), np.empty(0)),
        ),
    )
    return LongitudinalDataset(subjects=subjects, markers=markers)


class TestDatasetValidation:
    def test_duplicate_ids_rejected(self):
        ds = tiny_dataset()
        with pytest.raises(DataError, match="unique"):
            LongitudinalDataset(subjects=(ds.subjects[0], ds.subjects[0]), markers=ds.markers)

    def test_measurement_after_event_rejected(self):
        with pytest.raises(DataError, match="measurement times"):
            SubjectRecord(
                id="s1",
                event_time=0.4,
                cause=0,
                covariates=np.zeros(1),
                times=(np.array([0.0, 0.5]),),
                values=(np.array([1.0, 1.0]),),
            )

    def test_non_finite_value_rejected(self):
        with pytest.raises(DataError, match="non-finite"):
            SubjectRecord(
                id="s1",
                event_time=1.0,
                cause=0,
                covariates=np.zeros(1),
                times=(np.array([0.0]),),
                values=(np.array([np.nan]),),
            )

    def test_subject_without_measurements_rejected(self):
        markers = (MarkerModelSpec.from_trend("a"),)
        empty = SubjectRecord(
            id="s1", event_time=1.0, cause=0, covariates=np.zeros(1),
            times=(np.empty(0),), values=(np.empty(0),),
        )
        with pytest.raises(DataError, match="no measurements"):
            LongitudinalDataset(subjects=(empty,), markers=markers)

    def test_marker_arrays_skip_missing_series(self):
        ds = tiny_dataset()
        idx, times, values = ds.marker_arrays(1)
        assert idx.tolist() == [0]
        assert times.tolist() == [0.0]


class TestCsvRoundTrip:
    def test_lossless(self, tmp_path):
        ds = tiny_dataset()
        long_path = tmp_path / "long.csv"
        subj_path = tmp_path / "subjects.csv"
        write_dataset(ds, long_path, subj_path)
        back = load_dataset(long_path, subj_path)
        assert [m.name for m in back.markers] == ["a", "b"]
        assert back.n_subjects == ds.n_subjects
        for s0, s1 in zip(ds.subjects, back.subjects):
            assert s0.id == s1.id
            assert s0.event_time == s1.event_time
            assert s0.cause == s1.cause
            np.testing.assert_array_equal(s0.covariates, s1.covariates)
            for t0, t1, v0, v1 in zip(s0.times, s1.times, s0.values, s1.values):
                np.testing.assert_array_equal(t0, t1)
                np.testing.assert_array_equal(v0, v1)

    def test_missing_column_raises(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("id,marker,time\na,m,0\n")
        s = tmp_path / "subj.csv"
        s.write_text("id,event_time,cause\na,1,0\n")
        with pytest.raises(DataError, match="value"):
            load_dataset(p, s)

    def test_quadratic_trend_applied(self, tmp_path):
        ds = tiny_dataset()
        write_dataset(ds, tmp_path / "l.csv", tmp_path / "s.csv")
        back = load_dataset(tmp_path / "l.csv", tmp_path / "s.csv", trends={"a": "quadratic"})
        assert back.markers[0].trend == "quadratic"
        assert back.markers[0].n_fixed == 3
        assert back.markers[1].trend == "linear"
