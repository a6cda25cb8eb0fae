import numpy as np
import pytest

from survsynth.data_io import FeatureSpec, SurvivalDataset
from survsynth.survival_core import (
    CalibrationError,
    CoxModel,
    FitError,
    calibration,
    concordance_index,
    fit_coxph,
    hazard_ratio_table,
    kaplan_meier,
    log_partial_hazard,
    partial_loglik,
    partial_loglik_gradient,
    predicted_risk_at,
)


def make_ds(x, t, e, names=None):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] != len(t):
        x = x.T
    names = names or [f"f{i}" for i in range(x.shape[1])]
    return SurvivalDataset(
        features=x,
        specs=[FeatureSpec(n, "numeric") for n in names],
        durations=np.asarray(t, dtype=float),
        events=np.asarray(e, dtype=float),
    )


def random_instance(rng, n, p=1, tie_prob=0.3):
    x = rng.normal(size=(n, p))
    t = rng.exponential(size=n) + 0.1
    if tie_prob:
        t = np.round(t * 4) / 4  # manufacture ties
    e = (rng.random(n) < 0.7).astype(float)
    if e.sum() == 0:
        e[0] = 1.0
    return x, t, e


# ---------------------------------------------------------------------------
# brute-force oracles
# ---------------------------------------------------------------------------


def cindex_oracle(t, e, r):
    """Exhaustive O(n^2) pair enumeration."""
    concordant = 0.0
    comparable = 0
    n = len(t)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if t[i] < t[j] and e[i] == 1:
                earlier = i
            elif t[i] == t[j] and e[i] == 1 and e[j] == 0:
                earlier = i
            else:
                continue
            later = j
            comparable += 1
            if r[earlier] > r[later]:
                concordant += 1.0
            elif r[earlier] == r[later]:
                concordant += 0.5
    return concordant / comparable


def km_oracle(t, e):
    """Hand product-limit over distinct event times."""
    times = sorted({v for v, ev in zip(t, e) if ev == 1})
    s = 1.0
    out = []
    for u in times:
        at_risk = sum(1 for v in t if v >= u)
        deaths = sum(1 for v, ev in zip(t, e) if v == u and ev == 1)
        s *= (at_risk - deaths) / at_risk
        out.append((u, s))
    return out


class TestFitCoxph:
    def test_two_patient_grid_oracle(self):
        ds = make_ds([[1.0], [0.0]], [1.0, 2.0], [1.0, 1.0])
        model = fit_coxph(ds, penalizer=0.1, tol=1e-9)
        grid = np.arange(-10.0, 10.0, 1e-4)
        lls = [partial_loglik(ds, np.array([b]), penalizer=0.1) for b in grid]
        assert model.coefficients[0] == pytest.approx(grid[int(np.argmax(lls))], abs=1e-4)

    def test_first_order_optimality(self, gbsg2):
        model = fit_coxph(gbsg2, penalizer=1e-4, tol=1e-7)
        grad = partial_loglik_gradient(gbsg2, model.coefficients, penalizer=1e-4)
        assert np.max(np.abs(grad)) < 10 * 1e-7
        assert model.converged

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(40)
        for _ in range(5):
            x, t, e = random_instance(rng, 20, p=5)
            ds = make_ds(x, t, e)
            beta = rng.normal(scale=0.5, size=5)
            grad = partial_loglik_gradient(ds, beta, penalizer=0.2)
            h = 1e-5
            for i in range(5):
                bp, bm = beta.copy(), beta.copy()
                bp[i] += h
                bm[i] -= h
                fd = (partial_loglik(ds, bp, 0.2) - partial_loglik(ds, bm, 0.2)) / (2 * h)
                assert grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-8)

    def test_independent_covariate_is_insignificant(self):
        rng = np.random.default_rng(41)
        n = 400
        coin = (rng.random(n) < 0.5).astype(float)
        t = rng.exponential(size=n)
        e = (rng.random(n) < 0.8).astype(float)
        model = fit_coxph(make_ds(coin[:, None], t, e), penalizer=1e-4)
        assert abs(model.coefficients[0]) < 2 * model.standard_errors[0]

    def test_constant_column_rejected(self):
        ds = make_ds(np.ones((10, 1)), np.arange(1, 11), np.ones(10))
        with pytest.raises(FitError, match="constant"):
            fit_coxph(ds)

    def test_no_events_rejected(self):
        ds = make_ds(np.random.default_rng(0).normal(size=(10, 1)), np.arange(1, 11), np.zeros(10))
        with pytest.raises(FitError, match="events"):
            fit_coxph(ds)

    def test_non_convergence_reported(self, gbsg2):
        with pytest.raises(FitError, match="no convergence"):
            fit_coxph(gbsg2, max_iter=1)

    def test_negative_penalizer_rejected(self, gbsg2):
        with pytest.raises(FitError, match="penalizer"):
            fit_coxph(gbsg2, penalizer=-0.5)

    def test_collinear_columns_named(self):
        rng = np.random.default_rng(42)
        x = rng.normal(size=(30, 1))
        dup = np.column_stack([x, x])  # exactly collinear
        ds = make_ds(dup, rng.exponential(size=30) + 0.1, np.ones(30), names=["left", "right"])
        with pytest.raises(FitError) as err:
            fit_coxph(ds, penalizer=0.0)
        assert set(err.value.collinear_columns) == {"left", "right"} or "left" in str(err.value)

    def test_model_dict_roundtrip(self, gbsg2):
        model = fit_coxph(gbsg2, penalizer=1e-4)
        back = CoxModel.from_dict(model.to_dict())
        assert np.array_equal(back.coefficients, model.coefficients)
        assert np.array_equal(back.baseline_survival, model.baseline_survival)

    def test_baseline_survival_monotone(self, gbsg2):
        model = fit_coxph(gbsg2, penalizer=1e-4)
        assert np.all(np.diff(model.baseline_survival) <= 0)
        assert model.baseline_survival[0] <= 1.0
        assert np.all(model.baseline_survival > 0)


class TestLogPartialHazard:
    def test_zero_beta_zero_scores(self, gbsg2):
        model = fit_coxph(gbsg2, penalizer=1e-4)
        model.coefficients = np.zeros_like(model.coefficients)
        assert np.all(log_partial_hazard(model, gbsg2.features) == 0.0)

    def test_one_unit_increase_doubles_risk(self):
        ds = make_ds([[1.0], [0.0], [1.0], [0.0]], [1, 2, 3, 4], [1, 1, 1, 1])
        model = fit_coxph(ds, penalizer=1e-3)
        model.coefficients = np.array([np.log(2.0)])
        lp = log_partial_hazard(model, np.array([[1.0], [0.0]]))
        assert np.exp(lp[0] - lp[1]) == pytest.approx(2.0)

    def test_dimension_mismatch(self, gbsg2):
        model = fit_coxph(gbsg2, penalizer=1e-4)
        with pytest.raises(FitError, match="width"):
            log_partial_hazard(model, gbsg2.features[:, :3])


class TestHazardRatioTable:
    def test_analytic_interval(self):
        model = CoxModel(
            coefficients=np.array([0.0]),
            standard_errors=np.array([0.1]),
            baseline_times=np.array([1.0]),
            baseline_survival=np.array([0.9]),
            penalizer=0.0,
            converged=True,
            n_iterations=1,
            feature_names=["x"],
        )
        entry = hazard_ratio_table(model).entries[0]
        assert entry.hr == pytest.approx(1.0)
        assert entry.ci_low == pytest.approx(np.exp(-1.959963984540054 * 0.1), abs=1e-9)
        assert entry.ci_high == pytest.approx(np.exp(1.959963984540054 * 0.1), abs=1e-9)
        assert entry.contains_one

    def test_contains_one_consistency_fuzz(self):
        rng = np.random.default_rng(43)
        for _ in range(50):
            model = CoxModel(
                coefficients=rng.normal(size=3),
                standard_errors=np.abs(rng.normal(size=3)) + 1e-3,
                baseline_times=np.array([1.0]),
                baseline_survival=np.array([0.9]),
                penalizer=0.0,
                converged=True,
                n_iterations=1,
                feature_names=["a", "b", "c"],
            )
            for e in hazard_ratio_table(model).entries:
                assert e.ci_low <= e.hr <= e.ci_high
                assert e.contains_one == (e.ci_low <= 1.0 <= e.ci_high)


class TestKaplanMeier:
    def test_hand_case(self):
        km = kaplan_meier([1, 2, 3, 4], [1, 1, 0, 1])
        assert km.times.tolist() == [1.0, 2.0, 4.0]
        assert km.survival.tolist() == pytest.approx([0.75, 0.5, 0.0])

    def test_tie_case(self):
        km = kaplan_meier([5, 5, 7], [1, 1, 0])
        assert km.survival.tolist() == pytest.approx([1.0 / 3.0])

    def test_all_censored(self):
        km = kaplan_meier([1, 2, 3], [0, 0, 0])
        assert len(km.times) == 0
        assert np.all(km.survival_at([0.5, 2.5, 10.0]) == 1.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            kaplan_meier([], [])

    def test_matches_oracle_fuzz(self):
        rng = np.random.default_rng(44)
        for _ in range(25):
            n = int(rng.integers(2, 50))
            _, t, e = random_instance(rng, n)
            km = kaplan_meier(t, e)
            oracle = km_oracle(t, e)
            assert len(km.times) == len(oracle)
            for (ot, osur), kt, ks in zip(oracle, km.times, km.survival):
                assert kt == ot
                assert ks == pytest.approx(osur, abs=1e-12)


class TestConcordance:
    def test_perfectly_anti_ordered(self):
        assert concordance_index([3, 2, 1], [1, 1, 1], [1, 2, 3]) == 1.0

    def test_all_tied_scores(self):
        assert concordance_index([3, 2, 1], [1, 1, 1], [5, 5, 5]) == 0.5

    def test_no_comparable_pairs(self):
        with pytest.raises(ValueError, match="comparable"):
            concordance_index([1, 2, 3], [0, 0, 0], [1, 2, 3])

    def test_matches_oracle_fuzz(self):
        rng = np.random.default_rng(45)
        for _ in range(25):
            n = int(rng.integers(4, 50))
            _, t, e = random_instance(rng, n)
            r = np.round(rng.normal(size=n), 1)  # manufacture score ties
            if e.sum() == 0:
                e[0] = 1.0
            assert concordance_index(t, e, r) == pytest.approx(cindex_oracle(t, e, r), abs=0)

    def test_scale_invariance(self):
        rng = np.random.default_rng(46)
        _, t, e = random_instance(rng, 30)
        r = rng.normal(size=30)
        assert concordance_index(t, e, r) == concordance_index(t, e, 7.3 * r)


class TestPredictedRisk:
    def test_zero_lp_equals_baseline(self, gbsg2):
        model = fit_coxph(gbsg2, penalizer=1e-4)
        model.coefficients = np.zeros_like(model.coefficients)
        t = float(np.median(gbsg2.durations))
        idx = int(np.searchsorted(model.baseline_times, t, side="right")) - 1
        expected = 1.0 - model.baseline_survival[idx]
        assert np.allclose(predicted_risk_at(model, gbsg2.features, t), expected)

    def test_time_zero_risk_zero(self, gbsg2):
        model = fit_coxph(gbsg2, penalizer=1e-4)
        assert np.all(predicted_risk_at(model, gbsg2.features, 0.0) == 0.0)

    def test_single_event_breslow_step(self):
        # one event among three at-risk subjects: S0 jumps to exp(-1 / sum exp(lp))
        ds = make_ds([[0.4], [-0.2], [0.1]], [2.0, 3.0, 4.0], [1.0, 0.0, 0.0])
        model = fit_coxph(ds, penalizer=10.0)  # heavy ridge keeps beta near 0
        lp = log_partial_hazard(model, ds.features)
        expected = np.exp(-1.0 / np.exp(lp).sum())
        assert model.baseline_survival[0] == pytest.approx(expected, rel=1e-12)

    def test_flat_extrapolation(self, gbsg2):
        model = fit_coxph(gbsg2, penalizer=1e-4)
        far = float(gbsg2.durations.max()) * 10
        at_end = predicted_risk_at(model, gbsg2.features[:5], float(model.baseline_times[-1]))
        beyond = predicted_risk_at(model, gbsg2.features[:5], far)
        assert np.allclose(at_end, beyond)

    def test_negative_time_rejected(self, gbsg2):
        model = fit_coxph(gbsg2, penalizer=1e-4)
        with pytest.raises(ValueError):
            predicted_risk_at(model, gbsg2.features, -1.0)


class TestCalibration:
    def simulated_cohort(self, seed=47, n=5000):
        """Event times drawn exactly from a known PH law over two covariates."""
        rng = np.random.default_rng(seed)
        x = np.column_stack([rng.normal(size=n), (rng.random(n) < 0.5).astype(float)])
        beta = np.array([0.7, -0.4])
        lp = x @ beta
        t_event = 10.0 * (-np.log(rng.random(n)) / np.exp(lp))
        censor = rng.uniform(2.0, 40.0, size=n)
        t = np.minimum(t_event, censor)
        e = (t_event <= censor).astype(float)
        return make_ds(x, t, e)

    def test_well_specified_model_slope_near_one(self):
        ds = self.simulated_cohort()
        model = fit_coxph(ds, penalizer=1e-4)
        result = calibration(model, ds, t=float(np.median(ds.durations)), n_bins=10)
        assert 0.9 <= result.slope <= 1.1
        assert result.d_delta1 == abs(result.slope - 1.0)
        assert len(result.points) == 10

    def test_constant_risk_degenerate(self, gbsg2):
        model = fit_coxph(gbsg2, penalizer=1e-4)
        model.coefficients = np.zeros_like(model.coefficients)
        with pytest.raises(CalibrationError, match="degenerate"):
            calibration(model, gbsg2, t=1000.0)

    def test_zero_at_risk_bin_rejected(self):
        ds = self.simulated_cohort(n=200)
        model = fit_coxph(ds, penalizer=1e-4)
        with pytest.raises(CalibrationError, match="at-risk"):
            calibration(model, ds, t=float(ds.durations.max()) * 5, n_bins=10)
