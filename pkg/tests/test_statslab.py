import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpclean.review.store import ReviewVerdict
from kpclean.skeleton import Difficulty, ErrorClass
from kpclean.statslab import (
    compression_ratio,
    detector_diagnostics,
    error_frequency,
    evaluate_metric,
    inject_jitter,
    jitter_compression_curve,
    labeled_keypoint_population,
    removal_distribution,
    render_heatmap,
    sample_size,
    significance,
)

from conftest import make_mpii_bundle, make_mpii_pose, predictions_from_bundle
from oracles import brute_force_pckh, enumerate_removals


class TestSampleSize:
    def test_published_populations(self):
        assert sample_size(4917) == 161
        assert sample_size(6352) == 163

    def test_infinite_population_limit(self):
        assert sample_size(10**12) == 167

    def test_margin_validation(self):
        with pytest.raises(ValueError):
            sample_size(100, margin=0.0)
        with pytest.raises(ValueError):
            sample_size(100, margin=1.0)
        with pytest.raises(ValueError):
            sample_size(0)

    @given(st.integers(min_value=1, max_value=10**7))
    @settings(max_examples=50)
    def test_never_exceeds_population_or_limit(self, n):
        s = sample_size(n)
        assert 1 <= s <= min(n, 167)

    def test_monotone_in_population(self):
        values = [sample_size(n) for n in (10, 100, 1000, 10_000, 10**6)]
        assert values == sorted(values)

    def test_monotone_in_confidence(self):
        values = [sample_size(5000, confidence=c) for c in (0.8, 0.9, 0.95, 0.99)]
        assert values == sorted(values)

    def test_antitone_in_margin(self):
        values = [sample_size(5000, margin=m) for m in (0.05, 0.1, 0.2)]
        assert values == sorted(values, reverse=True)


@pytest.fixture()
def small_bundle():
    poses = [make_mpii_pose(f"p{i}", center=(100.0 + 40 * i, 110.0)) for i in range(5)]
    return make_mpii_bundle(poses)


class TestRemovalDistribution:
    def test_k_zero_constant(self, small_bundle):
        preds = predictions_from_bundle(small_bundle, jitter=10.0, seed=4)
        dist = removal_distribution(small_bundle, preds, "PCKh@0.5", k=0, reps=20, seed=1)
        raw = evaluate_metric(small_bundle, preds, "PCKh@0.5")
        assert dist.std == 0.0
        assert (dist.samples == raw).all()

    def test_seed_determinism(self, small_bundle):
        preds = predictions_from_bundle(small_bundle, jitter=10.0, seed=4)
        d1 = removal_distribution(small_bundle, preds, "PCKh@0.5", k=5, reps=50, seed=7)
        d2 = removal_distribution(small_bundle, preds, "PCKh@0.5", k=5, reps=50, seed=7)
        assert np.array_equal(d1.samples, d2.samples)
        d3 = removal_distribution(small_bundle, preds, "PCKh@0.5", k=5, reps=50, seed=8)
        assert not np.array_equal(d1.samples, d3.samples)

    def test_mean_tracks_raw(self, small_bundle):
        preds = predictions_from_bundle(small_bundle, jitter=10.0, seed=4)
        raw = evaluate_metric(small_bundle, preds, "PCKh@0.5")
        dist = removal_distribution(small_bundle, preds, "PCKh@0.5", k=8, reps=400, seed=3)
        assert abs(dist.mean - raw) <= 0.05 * 100 or abs(dist.mean - raw) <= 3 * dist.std / math.sqrt(400) + 1e-9

    def test_k_exceeding_population_rejected(self, small_bundle):
        preds = predictions_from_bundle(small_bundle)
        with pytest.raises(ValueError):
            removal_distribution(small_bundle, preds, "PCKh@0.5", k=10_000, reps=5, seed=0)

    def test_matches_exhaustive_enumeration(self):
        # 12 labeled keypoints: 3 poses with 4 labeled joints each
        mask = [False] * 16
        for j in (0, 5, 9, 10):
            mask[j] = True
        poses = [
            make_mpii_pose(f"p{i}", center=(120.0 + 50 * i, 100.0), labeled_mask=mask)
            for i in range(3)
        ]
        bundle = make_mpii_bundle(poses)
        preds = predictions_from_bundle(bundle, jitter=9.0, seed=12)
        population = labeled_keypoint_population(bundle)
        assert len(population) == 12

        k = 2
        oracle = {
            subset: brute_force_pckh(bundle, preds, 0.5, exclude=subset)
            for subset in enumerate_removals(population, k)
        }
        dist = removal_distribution(
            bundle, preds, "PCKh@0.5", k=k, reps=120, seed=5, keep_removals=True
        )
        for sample, removed in zip(dist.samples, dist.removals):
            assert sample == pytest.approx(oracle[frozenset(removed)], abs=1e-12)
        # enumeration mean is the exact expectation; MC mean must be close
        exact = np.mean(list(oracle.values()))
        assert abs(dist.mean - exact) < 3.0


class TestSignificance:
    def test_zero_sigma_at_mean(self, small_bundle):
        preds = predictions_from_bundle(small_bundle, jitter=10.0, seed=4)
        dist = removal_distribution(small_bundle, preds, "PCKh@0.5", k=5, reps=50, seed=7)
        assert significance(dist.mean, dist) == 0.0

    def test_sigma_multiples(self, small_bundle):
        preds = predictions_from_bundle(small_bundle, jitter=10.0, seed=4)
        dist = removal_distribution(small_bundle, preds, "PCKh@0.5", k=5, reps=50, seed=7)
        assert significance(dist.mean + 2 * dist.std, dist) == pytest.approx(2.0)

    def test_zero_std_warns_and_returns_inf(self, small_bundle):
        preds = predictions_from_bundle(small_bundle)
        dist = removal_distribution(small_bundle, preds, "PCKh@0.5", k=0, reps=5, seed=0)
        with pytest.warns(UserWarning):
            assert significance(dist.mean + 1.0, dist) == math.inf


def review_verdict(vid, annotator, pose, joint, classes):
    return ReviewVerdict.create(
        verdict_id=vid,
        annotator_id=annotator,
        pose_id=pose,
        joint_index=joint,
        error_classes=classes,
        difficulty=Difficulty.EASY,
        timestamp=1.0,
    )


class TestDetectorDiagnostics:
    def test_all_flagged_confirmed(self):
        flagged = [("p0", 0), ("p1", 1)]
        verdicts = [
            review_verdict("v1", "a1", "p0", 0, {ErrorClass.FALSE_LABEL}),
            review_verdict("v2", "a1", "p1", 1, {ErrorClass.INCORRECT_POSITION}),
        ]
        diag = detector_diagnostics(flagged, verdicts)
        assert diag.precision == 1.0
        assert diag.recall == 1.0

    def test_hand_counted_fixture(self):
        flagged = [("p0", 0), ("p1", 1), ("p2", 2)]
        verdicts = [
            # a1 judged all three flagged (2 faulty) and 1 control faulty keypoint
            review_verdict("v1", "a1", "p0", 0, {ErrorClass.FALSE_LABEL}),
            review_verdict("v2", "a1", "p1", 1, set()),
            review_verdict("v3", "a1", "p2", 2, {ErrorClass.LEFT_RIGHT_SWAP}),
            review_verdict("v4", "a1", "p9", 9, {ErrorClass.FALSE_LABEL}),
            # a2 judged two flagged (1 faulty), no extra faulty
            review_verdict("v5", "a2", "p0", 0, {ErrorClass.FALSE_LABEL}),
            review_verdict("v6", "a2", "p1", 1, set()),
        ]
        diag = detector_diagnostics(flagged, verdicts)
        p1, r1 = diag.per_annotator["a1"]
        assert p1 == pytest.approx(2 / 3)
        assert r1 == pytest.approx(2 / 3)
        p2, r2 = diag.per_annotator["a2"]
        assert p2 == pytest.approx(1 / 2)
        assert r2 == pytest.approx(1.0)
        assert diag.precision == pytest.approx((2 / 3 + 1 / 2) / 2)

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            detector_diagnostics([("p0", 0)], [])


class TestErrorFrequency:
    def test_empty(self):
        table = error_frequency([])
        assert table.total_verdicts == 0
        assert all(v == 0 for v in table.class_counts.values())

    def test_hand_count(self):
        verdicts = [
            review_verdict("v1", "a1", "p0", 0, {ErrorClass.FALSE_LABEL}),
            review_verdict("v2", "a1", "p1", 3, {ErrorClass.FALSE_LABEL, ErrorClass.VISIBILITY_ERROR}),
            review_verdict("v3", "a2", "p2", 3, {ErrorClass.LEFT_RIGHT_SWAP}),
            review_verdict("v4", "a2", "p3", None, set()),
        ]
        table = error_frequency(verdicts)
        assert table.total_verdicts == 4
        assert table.class_counts["false_label"] == 2
        assert table.class_counts["visibility_error"] == 1
        assert table.class_fractions["left_right_swap"] == pytest.approx(0.25)
        assert table.per_joint[3]["false_label"] == 1
        assert "visibility_error" not in table.per_joint[3]


class TestJitter:
    def test_zero_sigma_identity(self, small_bundle):
        assert inject_jitter(small_bundle, 0.0, seed=3) is small_bundle

    def test_preserves_structure(self, small_bundle):
        jittered = inject_jitter(small_bundle, 0.01, seed=3)
        assert len(jittered) == len(small_bundle)
        for before, after in zip(small_bundle.annotations, jittered.annotations):
            assert before.bbox == after.bbox
            assert before.head_box == after.head_box
            for kb, ka in zip(before.keypoints, after.keypoints):
                assert kb.visibility == ka.visibility
                if not kb.labeled:
                    assert (ka.x, ka.y) == (kb.x, kb.y)

    def test_deterministic(self, small_bundle):
        j1 = inject_jitter(small_bundle, 0.01, seed=3)
        j2 = inject_jitter(small_bundle, 0.01, seed=3)
        assert j1.annotations == j2.annotations

    def test_displacement_std_matches_target(self):
        # law-of-large-numbers check over ~1e5 keypoints
        poses = [
            make_mpii_pose(f"p{i}", center=(500.0, 500.0), side=100.0) for i in range(6250)
        ]
        bundle = make_mpii_bundle(poses)
        sigma_pct = 0.01
        target = sigma_pct * math.hypot(100.0, 100.0)
        jittered = inject_jitter(bundle, sigma_pct, seed=0)
        deltas = []
        for before, after in zip(bundle.annotations, jittered.annotations):
            for kb, ka in zip(before.keypoints, after.keypoints):
                deltas.append(ka.x - kb.x)
                deltas.append(ka.y - kb.y)
        observed = np.std(deltas)
        assert abs(observed - target) / target < 0.02


class TestHeatmaps:
    def test_center_peak_and_symmetry(self):
        hm = render_heatmap(24.0, 32.0, grid=(64, 48), sigma_px=2.0)
        assert hm.in_bounds
        assert hm.peak == (32, 24)
        assert hm.grid[32, 24] == 1.0
        assert hm.grid.max() == 1.0
        assert hm.grid[32, 23] == pytest.approx(hm.grid[32, 25])
        assert hm.grid[31, 24] == pytest.approx(hm.grid[33, 24])

    def test_deterministic(self):
        a = render_heatmap(10.2, 20.7)
        b = render_heatmap(10.2, 20.7)
        assert np.array_equal(a.grid, b.grid)

    def test_out_of_grid_zero_map(self):
        hm = render_heatmap(100.0, 10.0, grid=(64, 48))
        assert not hm.in_bounds
        assert hm.peak is None
        assert (hm.grid == 0).all()

    def test_integral_grows_with_sigma(self):
        sums = [render_heatmap(24.0, 32.0, sigma_px=s).grid.sum() for s in (1.0, 2.0, 4.0)]
        assert sums == sorted(sums)
        # closed form for an unclipped Gaussian: integral ~ 2*pi*sigma^2
        assert sums[1] == pytest.approx(2 * math.pi * 4.0, rel=0.01)


class TestCompression:
    def test_constant_zero_highly_compressible(self):
        from kpclean.statslab import Heatmap

        maps = [Heatmap(np.zeros((64, 48))) for _ in range(8)]
        assert compression_ratio(maps) < 0.01

    def test_deterministic(self, small_bundle):
        maps = [render_heatmap(10, 10), render_heatmap(30, 40)]
        assert compression_ratio(maps) == compression_ratio(maps)

    def test_monotone_under_jitter(self, small_bundle):
        curve = jitter_compression_curve(
            small_bundle, [0.0, 0.005, 0.01, 0.02], seed=0, replicas=12
        )
        values = [curve[s] for s in (0.0, 0.005, 0.01, 0.02)]
        assert all(a < b for a, b in zip(values, values[1:]))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            compression_ratio([])


class TestRemovalDistributionCoco:
    def test_coco_map_metric_path(self):
        from kpclean import parse_coco, parse_predictions
        from kpclean.skeleton import COCO17
        from conftest import GOLDEN_DIR

        bundle = parse_coco(GOLDEN_DIR / "coco3_annotations.json")
        preds = parse_predictions(GOLDEN_DIR / "coco3_predictions.json", COCO17)
        raw = evaluate_metric(bundle, preds, "AP")
        dist = removal_distribution(bundle, preds, "AP", k=3, reps=20, seed=4)
        assert dist.std >= 0.0
        assert len(dist.samples) == 20
        # removing keypoints moves AP but stays in a sane band around RAW
        assert abs(dist.mean - raw) < 20.0
        rerun = removal_distribution(bundle, preds, "AP", k=3, reps=20, seed=4)
        assert np.array_equal(dist.samples, rerun.samples)
