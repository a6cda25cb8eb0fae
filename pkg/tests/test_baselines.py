import numpy as np
import pytest

from survsynth.baselines import (
    OneHotCodec,
    ResamplePlan,
    adasyn_augment,
    batch_correlation,
    bootstrap_ensemble_scores,
    build_wgan,
    correlation_loss,
    kl_standard_normal,
    ncr_clean,
    random_undersample,
    smote_augment,
    tomek_links,
    train_vae,
    train_wgan,
    vae_generate,
    wgan_generate,
    _largest_remainder_allocation,
)
from survsynth.data_io import FeatureSpec, SurvivalDataset, validate_schema
from survsynth.survival_core import fit_coxph, log_partial_hazard


def numeric_toy(points, events, durations=None):
    points = np.asarray(points, dtype=float)
    durations = np.asarray(durations, dtype=float) if durations is not None else np.arange(1.0, len(points) + 1)
    return SurvivalDataset(
        features=points,
        specs=[FeatureSpec(f"x{i}", "numeric") for i in range(points.shape[1])],
        durations=durations,
        events=np.asarray(events, dtype=float),
    )


class TestSmote:
    def test_synthetic_rows_on_the_segment(self):
        # two minority points with k=1: every synthetic row interpolates them
        ds = numeric_toy(
            [[0.0, 0.0], [10.0, 4.0], [5.0, 1.0], [6.0, 2.0], [7.0, 3.0], [8.0, 3.5], [9.0, 1.5]],
            [1, 1, 0, 0, 0, 0, 0],
            durations=[2.0, 6.0, 1, 1, 1, 1, 1],
        )
        out = smote_augment(ds, ResamplePlan(k_neighbors=1, seed=4))
        added = out.subset(np.arange(ds.n_rows, out.n_rows))
        assert added.n_rows == 3  # parity: 5 majority - 2 minority
        for row, dur in zip(added.features, added.durations):
            lam = row[0] / 10.0
            assert 0.0 <= lam <= 1.0
            assert row[1] == pytest.approx(4.0 * lam)
            assert dur == pytest.approx(2.0 + 4.0 * lam)
        assert np.all(added.events == 1.0)

    def test_minority_label_assigned_when_events_majority(self):
        ds = numeric_toy(
            [[i * 1.0, i * 0.5 + (i % 3)] for i in range(10)],
            [1, 1, 1, 1, 1, 1, 1, 0, 0, 0],
        )
        out = smote_augment(ds, ResamplePlan(k_neighbors=2, seed=0))
        added = out.subset(np.arange(ds.n_rows, out.n_rows))
        assert np.all(added.events == 0.0)

    def test_binary_columns_rounded_and_groups_resolved(self, gbsg2):
        out = smote_augment(gbsg2, ResamplePlan(seed=1))
        assert validate_schema(out).passed
        assert out.n_rows > gbsg2.n_rows
        assert np.all(np.isin(out.features, (0.0, 1.0)))

    def test_k_too_large_rejected(self):
        ds = numeric_toy([[0.0], [1.0], [2.0], [3.0]], [1, 1, 0, 0])
        with pytest.raises(ValueError, match="minority"):
            smote_augment(ds, ResamplePlan(k_neighbors=5))

    def test_convex_hull_bound(self, gbsg2):
        out = smote_augment(gbsg2, ResamplePlan(seed=2))
        added = out.subset(np.arange(gbsg2.n_rows, out.n_rows))
        minority = gbsg2.subset(np.nonzero(gbsg2.events == 1.0)[0])
        for j in range(gbsg2.features.shape[1]):
            assert added.features[:, j].min() >= minority.features[:, j].min()
            assert added.features[:, j].max() <= minority.features[:, j].max()
        assert added.durations.min() >= minority.durations.min()
        assert added.durations.max() <= minority.durations.max()


class TestAdasyn:
    def test_allocation_proportional(self):
        alloc = _largest_remainder_allocation(np.array([0.0, 0.5, 1.0]), 6)
        assert alloc.tolist() == [0, 2, 4]

    def test_all_zero_difficulty_uniform_fallback(self):
        alloc = _largest_remainder_allocation(np.zeros(3), 6)
        assert alloc.tolist() == [2, 2, 2]

    def test_difficulty_extremes(self):
        # minority pair far from majority: zero difficulty for the isolated pair,
        # maximal for the minority point inside the majority cluster
        pts = [[0.0, 0.01], [0.5, 0.02], [50.0, 0.03], [50.5, 0.04], [51.0, 0.05], [51.5, 0.06], [50.7, 0.07]]
        ds = numeric_toy(pts, [1, 1, 0, 0, 0, 0, 1], durations=[1, 1, 5, 5, 5, 5, 1])
        out = adasyn_augment(ds, ResamplePlan(k_neighbors=2, seed=3))
        added = out.subset(np.arange(ds.n_rows, out.n_rows))
        assert added.n_rows == 1  # parity: 4 majority - 3 minority
        # the single allocated sample must come from the hard minority point at x~50.7
        assert added.features[0, 0] > 10.0

    def test_schema_closed(self, gbsg2):
        out = adasyn_augment(gbsg2, ResamplePlan(seed=4))
        assert validate_schema(out).passed


class TestUndersamplers:
    def test_balanced_input_unchanged_count(self):
        ds = numeric_toy([[float(i)] for i in range(10)], [1] * 5 + [0] * 5)
        out = random_undersample(ds, ResamplePlan(seed=5))
        assert out.n_rows == 10

    def test_ninety_ten_becomes_twenty(self):
        rng = np.random.default_rng(6)
        ds = numeric_toy(rng.normal(size=(100, 2)), [1] * 10 + [0] * 90)
        out = random_undersample(ds, ResamplePlan(seed=6))
        assert out.n_rows == 20
        assert out.events.sum() == 10

    def test_same_seed_same_selection(self, gbsg2):
        a = random_undersample(gbsg2, ResamplePlan(seed=7))
        b = random_undersample(gbsg2, ResamplePlan(seed=7))
        assert np.array_equal(a.features, b.features)

    def test_surviving_rows_unmutated(self, gbsg2):
        out = random_undersample(gbsg2, ResamplePlan(seed=8))
        # every surviving row exists verbatim in the source
        source_rows = {tuple(r) for r in np.column_stack([gbsg2.features, gbsg2.durations, gbsg2.events])}
        for row in np.column_stack([out.features, out.durations, out.events]):
            assert tuple(row) in source_rows


class TestTomek:
    def test_well_separated_clusters_no_links(self):
        ds = numeric_toy([[0.0], [0.1], [0.2], [10.0], [10.1], [10.2]], [1, 1, 1, 0, 0, 0])
        removed, out = tomek_links(ds)
        assert len(removed) == 0
        assert out.n_rows == 6

    def test_boundary_majority_point_removed(self):
        # majority point at 1.0 and minority at 1.2 are mutual nearest neighbors
        ds = numeric_toy([[0.0], [1.0], [1.2], [5.0], [5.1], [4.9]], [0, 0, 1, 0, 0, 0],
                         durations=[1, 1, 2, 3, 3, 3])
        removed, out = tomek_links(ds)
        assert removed.tolist() == [1]
        assert out.n_rows == 5

    def test_minority_never_removed(self, gbsg2):
        removed, _ = tomek_links(gbsg2)
        label = 1.0 if gbsg2.events.mean() <= 0.5 else 0.0
        assert np.all(gbsg2.events[removed] != label)


class TestNcr:
    def test_pure_majority_unchanged(self):
        ds = numeric_toy([[float(i)] for i in range(6)], [0] * 6)
        out = ncr_clean(ds, 3)
        assert out.n_rows == 6

    def test_majority_point_inside_minority_cluster_removed(self):
        pts = [[0.0], [0.2], [0.4], [0.21], [10.0], [10.2], [10.4], [10.6]]
        events = [1, 1, 1, 0, 0, 0, 0, 0]  # lone majority (0) point sits among minority
        ds = numeric_toy(pts, events, durations=[1] * 8)
        out = ncr_clean(ds, 3)
        assert out.n_rows == 7
        assert 0.21 not in out.features[:, 0].tolist()

    def test_minority_never_removed(self, gbsg2):
        out = ncr_clean(gbsg2, 3)
        label = 1.0 if gbsg2.events.mean() <= 0.5 else 0.0
        assert np.sum(out.events == label) == np.sum(gbsg2.events == label)


class TestCorrelationLoss:
    def test_identical_matrices_near_zero(self):
        rng = np.random.default_rng(9)
        x = rng.random((20, 4))
        loss, grad = correlation_loss(x, batch_correlation(x))
        assert loss < 1e-12
        assert np.max(np.abs(grad)) < 1e-9

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        x = rng.random((12, 4))
        target = batch_correlation(rng.random((12, 4)))
        _, grad = correlation_loss(x, target)
        for _ in range(10):
            i, j = rng.integers(12), rng.integers(4)
            h = 1e-6
            xp, xm = x.copy(), x.copy()
            xp[i, j] += h
            xm[i, j] -= h
            fd = (correlation_loss(xp, target)[0] - correlation_loss(xm, target)[0]) / (2 * h)
            assert grad[i, j] == pytest.approx(fd, rel=1e-4, abs=1e-9)


class TestVae:
    def test_kl_zero_at_standard_normal(self):
        assert kl_standard_normal(np.zeros((5, 3)), np.zeros((5, 3))) == 0.0

    def test_kl_positive_elsewhere(self):
        rng = np.random.default_rng(11)
        assert kl_standard_normal(rng.normal(size=(5, 3)), rng.normal(size=(5, 3))) > 0.0

    def test_generated_batches_pass_schema(self, gbsg2):
        model, losses = train_vae(gbsg2, epochs=25, seed=12)
        assert losses[-1] < losses[0]
        for seed in range(3):
            synth = vae_generate(model, 150, model.codec.state, seed=seed)
            assert synth.n_rows == 150
            assert validate_schema(synth).passed

    def test_codec_roundtrip_identity(self, gbsg2):
        codec = OneHotCodec.fit(gbsg2)
        back = codec.decode(codec.encode(gbsg2))
        assert np.array_equal(back.features, gbsg2.features)
        assert np.allclose(back.durations, gbsg2.durations)
        assert np.array_equal(back.events, gbsg2.events)


class TestWgan:
    def test_critic_weights_clipped(self, gbsg2):
        model, _ = train_wgan(gbsg2, epochs=10, seed=13)
        for p in model.critic.parameters():
            assert np.max(np.abs(p)) <= 0.01 + 1e-15

    def test_untrained_generator_output_in_unit_interval(self, gbsg2):
        codec = OneHotCodec.fit(gbsg2)
        model = build_wgan(codec.width, codec, seed=14)
        z = np.random.default_rng(14).standard_normal((30, model.latent_dim))
        out, _ = model.generator.forward(z, train=False)
        assert np.all((out > 0.0) & (out < 1.0))

    def test_generated_batches_pass_schema(self, gbsg2):
        model, _ = train_wgan(gbsg2, epochs=15, seed=15)
        for seed in range(3):
            synth = wgan_generate(model, 120, model.codec.state, seed=seed)
            assert validate_schema(synth).passed

    def test_bad_clip_rejected(self, gbsg2):
        codec = OneHotCodec.fit(gbsg2)
        with pytest.raises(ValueError):
            build_wgan(codec.width, codec, clip=0.0)


class TestBootstrapEnsemble:
    def test_single_estimator_without_bootstrap_equals_plain(self, gbsg2):
        model = fit_coxph(gbsg2, penalizer=1e-4)
        plain = log_partial_hazard(model, gbsg2.features[:30])
        ens = bootstrap_ensemble_scores(
            gbsg2, gbsg2.features[:30], n_estimators=1, penalizer=1e-4, seed=0, bootstrap=False
        )
        assert np.array_equal(ens, plain)

    def test_deterministic(self, gbsg2):
        a = bootstrap_ensemble_scores(gbsg2, gbsg2.features[:20], n_estimators=3, seed=21)
        b = bootstrap_ensemble_scores(gbsg2, gbsg2.features[:20], n_estimators=3, seed=21)
        assert np.array_equal(a, b)

    def test_averaging_permutation_invariant(self, gbsg2):
        singles = [
            bootstrap_ensemble_scores(gbsg2, gbsg2.features[:25], n_estimators=1, seed=s)
            for s in (3, 4, 5)
        ]
        forward = np.mean(singles, axis=0)
        reversed_ = np.mean(singles[::-1], axis=0)
        assert np.allclose(forward, reversed_, rtol=1e-12, atol=0)

    def test_averaging_shrinks_variance(self, gbsg2):
        # law of averages: the ensemble's score variance cannot exceed the mean
        # variance of its member estimators
        singles = np.stack(
            [
                bootstrap_ensemble_scores(gbsg2, gbsg2.features, n_estimators=1, seed=s)
                for s in range(6)
            ]
        )
        averaged = singles.mean(axis=0)
        assert averaged.var() <= np.mean([s.var() for s in singles]) + 1e-12

    def test_bad_estimator_count(self, gbsg2):
        with pytest.raises(ValueError):
            bootstrap_ensemble_scores(gbsg2, gbsg2.features, n_estimators=0)


class TestResamplePlan:
    def test_invalid_k(self):
        with pytest.raises(ValueError):
            ResamplePlan(k_neighbors=0)

    def test_invalid_ratio(self):
        with pytest.raises(ValueError):
            ResamplePlan(target_ratio=1.5)
