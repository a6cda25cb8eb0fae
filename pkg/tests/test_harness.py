import hashlib
from pathlib import Path

import numpy as np
import pytest

from survsynth.harness import (
    cell_seed,
    cv_cells_from_csv,
    cv_cells_to_csv,
    emit_report,
    five_by_two_cv,
    km_max_gap,
    realism_report,
    stratified_halves,
    utility_report,
)
from survsynth.survival_core import kaplan_meier


@pytest.fixture(scope="module")
def cv_none(gbsg2):
    return five_by_two_cv(gbsg2, "none", seed=42)


class TestFolds:
    def test_halves_partition_and_stratify(self, gbsg2):
        overall = gbsg2.events.mean()
        for fold in range(5):
            a, b = stratified_halves(gbsg2, seed=0, fold=fold)
            assert len(np.intersect1d(a, b)) == 0
            assert len(a) + len(b) == gbsg2.n_rows
            for half in (a, b):
                assert abs(gbsg2.events[half].mean() - overall) <= 0.02

    def test_folds_independent_of_method(self, gbsg2):
        # the split depends on (seed, fold) only; method enters via cell_seed
        a1, b1 = stratified_halves(gbsg2, seed=3, fold=2)
        a2, b2 = stratified_halves(gbsg2, seed=3, fold=2)
        assert np.array_equal(a1, a2) and np.array_equal(b1, b2)
        assert cell_seed(3, 2, 0, "none") != cell_seed(3, 2, 0, "smote")

    def test_too_small_dataset_rejected(self, gbsg2):
        with pytest.raises(ValueError, match="50 rows"):
            five_by_two_cv(gbsg2.subset(np.arange(30)), "none")


class TestCvResult:
    def test_ten_cells_and_recomputable_aggregates(self, cv_none):
        assert len(cv_none.cells) == 10
        values = [c.c_index for c in cv_none.cells]
        assert cv_none.c_index_mean() == pytest.approx(float(np.mean(values)))
        assert cv_none.c_index_std() == pytest.approx(float(np.std(values, ddof=1)))
        assert cv_none.failure_count == 0

    def test_calibration_horizons_present(self, cv_none, gbsg2):
        assert cv_none.horizons["p50"] == pytest.approx(float(np.median(gbsg2.durations)))
        summary = cv_none.calibration_summary()
        for label in ("p25", "p50", "p75"):
            assert summary[label]["n_cells"] >= 8  # occasional per-bin failures allowed

    def test_ensemble_method_runs_without_calibration(self, gbsg2):
        result = five_by_two_cv(gbsg2, "ensemble", seed=1, options={"n_estimators": 3})
        assert result.failure_count == 0
        assert all(r is None for c in result.cells for r in c.calibration.values())
        assert 0.5 < result.c_index_mean() < 1.0

    def test_cells_csv_roundtrip(self, cv_none, tmp_path):
        path = tmp_path / "cells.csv"
        cv_cells_to_csv(cv_none, path)
        back = cv_cells_from_csv(path)
        assert back.method == cv_none.method
        assert back.seed == cv_none.seed
        for a, b in zip(back.cells, cv_none.cells):
            assert (a.fold, a.swap, a.c_index, a.failed) == (b.fold, b.swap, b.c_index, b.failed)
            for label in ("p25", "p50", "p75"):
                sa = a.calibration[label]
                sb = b.calibration[label]
                assert (sa is None) == (sb is None)
                if sa is not None:
                    assert sa.slope == sb.slope

    def test_resampler_method_in_cv(self, gbsg2):
        result = five_by_two_cv(gbsg2, "random_under", seed=2)
        assert result.failure_count == 0
        assert 0.5 < result.c_index_mean() < 1.0


class TestRealismReport:
    def test_identity_is_perfect(self, gbsg2):
        report = realism_report(gbsg2, gbsg2)
        assert report.max_abs_corr_diff == 0.0
        for doc in report.binary.values():
            assert doc["real"] == doc["synth"]

    def test_histogram_counts_sum_to_rows(self, demo):
        ds = demo["whas500"]
        report = realism_report(ds, ds)
        for doc in report.numeric.values():
            assert sum(doc["real_counts"]) == ds.n_rows
            assert sum(doc["synth_counts"]) == ds.n_rows

    def test_correlation_matrix_properties(self, demo):
        ds = demo["whas500"]
        report = realism_report(ds, ds)
        assert np.allclose(report.corr_real, report.corr_real.T)
        assert np.allclose(np.diag(report.corr_real), 1.0)

    def test_shuffled_columns_detected(self, gbsg2):
        rng = np.random.default_rng(13)
        broken = gbsg2.copy()
        for j in range(broken.features.shape[1]):
            rng.shuffle(broken.features[:, j])
        report = realism_report(gbsg2, broken)
        assert report.max_abs_corr_diff > 0.2

    def test_schema_mismatch_rejected(self, gbsg2, demo):
        with pytest.raises(ValueError, match="schema"):
            realism_report(gbsg2, demo["whas500"])


class TestUtilityReport:
    def test_identity_is_perfect(self, gbsg2):
        report = utility_report(gbsg2, gbsg2)
        assert all(report.point_in_ci.values())
        assert all(report.contains_one_agrees.values())
        assert report.km_gap == 0.0

    def test_event_shuffled_synthetic_detected(self, gbsg2):
        rng = np.random.default_rng(14)
        broken = gbsg2.copy()
        keep = rng.permutation(gbsg2.n_rows)
        broken.durations = gbsg2.durations[keep] * 0.4
        report = utility_report(gbsg2, broken)
        assert report.km_gap > 0.1

    def test_covariate_subset(self, gbsg2):
        names = gbsg2.feature_names[:4]
        report = utility_report(gbsg2, gbsg2, covariates=names)
        assert report.covariates == names
        assert len(report.real_hr.entries) == 4


class TestKmMaxGap:
    def test_identical_zero(self, gbsg2):
        km = kaplan_meier(gbsg2.durations, gbsg2.events)
        assert km_max_gap(km, km) == 0.0

    def test_constant_gap_construction(self):
        # one curve stays at 1.0 (event at far future), other ends at 0.4
        a = kaplan_meier([100.0, 101.0], [0.0, 0.0])
        b = kaplan_meier([1.0, 2.0, 3.0, 4.0, 5.0], [1, 1, 1, 0, 0])
        with pytest.raises(ValueError):
            km_max_gap(a, b)  # curve a has no event times
        a = kaplan_meier([100.0, 101.0], [0.0, 1.0])
        assert km_max_gap(a, b) == pytest.approx(0.6)

    def test_matches_dense_grid(self):
        rng = np.random.default_rng(15)
        for _ in range(5):
            t1 = rng.exponential(5, 40) + 0.1
            e1 = (rng.random(40) < 0.7).astype(float)
            t2 = rng.exponential(4, 30) + 0.1
            e2 = (rng.random(30) < 0.6).astype(float)
            e1[0] = e2[0] = 1.0
            a, b = kaplan_meier(t1, e1), kaplan_meier(t2, e2)
            grid = np.linspace(0, max(t1.max(), t2.max()) * 1.1, 100_000)
            dense = float(np.max(np.abs(a.survival_at(grid) - b.survival_at(grid))))
            assert km_max_gap(a, b) >= dense - 1e-9


class TestEmitReport:
    def tree(self, gbsg2, cv_none):
        return {
            "manifest": {"seed": 42},
            "realism": realism_report(gbsg2, gbsg2),
            "utility": utility_report(gbsg2, gbsg2),
            "cv": {"none": cv_none},
        }

    def test_empty_tree_index_only(self, tmp_path):
        emit_report({}, tmp_path)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["index.json"]

    def test_full_tree_files(self, gbsg2, cv_none, tmp_path):
        files = emit_report(self.tree(gbsg2, cv_none), tmp_path)
        for rel in files:
            assert (tmp_path / rel).is_file()
        assert "summary.json" in files
        assert "utility/km.svg" in files
        assert "cv/none/cells.csv" in files
        svg = (tmp_path / "utility" / "km.svg").read_text()
        assert svg.startswith("<svg") and "polyline" in svg

    def test_byte_identical_reruns(self, gbsg2, cv_none, tmp_path):
        def digest(root):
            h = hashlib.sha256()
            for p in sorted(Path(root).rglob("*")):
                if p.is_file():
                    h.update(str(p.relative_to(root)).encode())
                    h.update(p.read_bytes())
            return h.hexdigest()

        emit_report(self.tree(gbsg2, cv_none), tmp_path / "a")
        emit_report(self.tree(gbsg2, cv_none), tmp_path / "b")
        assert digest(tmp_path / "a") == digest(tmp_path / "b")
