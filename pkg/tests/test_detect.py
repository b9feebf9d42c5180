import math

import numpy as np
import pytest
from scipy.stats import binomtest

from kpclean.detect import (
    EULER_GAMMA,
    apply_threshold,
    average_path_length,
    build_features,
    fit_forest,
    flag,
    load_forest,
    save_forest,
    score,
    score_matrix,
    score_verdicts,
    verdicts_from_json,
    verdicts_to_csv,
    verdicts_to_json,
)
from kpclean.metrics import extract_distances
from kpclean.metrics.distances import JointDistanceRecord


def rec(pose, joint, model, dist, annotated=True, missing=False):
    return JointDistanceRecord(
        pose_id=pose,
        joint_index=joint,
        model_id=model,
        raw_distance=math.nan if missing else dist,
        normalized_distance=math.nan if missing else dist,
        per_joint_oks=None,
        annotated=annotated,
        missing=missing,
    )


class TestBuildFeatures:
    def test_zero_distances_zero_vector(self):
        records = [rec("p", 0, f"m{i}", 0.0) for i in range(3)]
        vectors = build_features(records, 3)
        assert len(vectors) == 1
        assert (vectors[0].features == 0.0).all()

    def test_missing_model_imputed_at_percentile(self):
        records = []
        for j in range(200):
            records.append(rec("p", j, "m0", j / 100.0))
            records.append(rec("p", j, "m1", j / 100.0))
        records.append(rec("q", 0, "m0", 0.5))
        records.append(rec("q", 0, "m1", 0.0, missing=True))
        vectors = build_features(records, 2)
        target = next(v for v in vectors if v.pose_id == "q")
        observed = [r.normalized_distance for r in records if r.model_id == "m1" and not r.missing]
        assert target.features[1] == pytest.approx(np.percentile(observed, 99.5))

    def test_zero_models_rejected(self):
        with pytest.raises(ValueError):
            build_features([], 0)

    def test_model_count_mismatch_rejected(self):
        with pytest.raises(ValueError):
            build_features([rec("p", 0, "m0", 1.0)], 2)

    def test_all_finite_after_imputation(self, small_synth):
        records = extract_distances(small_synth.bundle, small_synth.predictions)
        vectors = build_features(records, 5)
        for v in vectors:
            assert np.all(np.isfinite(v.features))

    def test_corrupted_keypoint_dominates_inlier_median(self, small_synth):
        records = extract_distances(small_synth.bundle, small_synth.predictions)
        vectors = build_features(records, 5)
        inlier = [
            v.features for v in vectors
            if v.annotated and (v.pose_id, v.joint_index) not in small_synth.faulty
        ]
        inlier_median = np.median(np.stack(inlier))
        for v in vectors:
            if (v.pose_id, v.joint_index) in small_synth.faulty:
                assert v.features.min() > 10 * inlier_median


class TestAveragePathLength:
    def test_formula(self):
        for n in (2, 10, 256):
            expected = 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n
            assert average_path_length(n) == pytest.approx(expected, abs=1e-15)

    def test_degenerate(self):
        assert average_path_length(0) == 0.0
        assert average_path_length(1) == 0.0


class TestForest:
    def test_seed_determinism_bit_identical(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(500, 5))
        m1 = fit_forest(X, t=20, psi=64, seed=9)
        m2 = fit_forest(X, t=20, psi=64, seed=9)
        s1 = score_matrix(m1, X)
        s2 = score_matrix(m2, X)
        assert np.array_equal(s1, s2)

    def test_different_seeds_differ(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(200, 3))
        s1 = score_matrix(fit_forest(X, t=10, psi=64, seed=0), X)
        s2 = score_matrix(fit_forest(X, t=10, psi=64, seed=1), X)
        assert not np.array_equal(s1, s2)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
    def test_extreme_point_gets_batch_maximum(self, seed):
        X = np.concatenate([np.zeros((100, 1)), [[100.0]]])
        model = fit_forest(X, t=50, psi=256, seed=seed)
        scores = score_matrix(model, X)
        assert scores.argmax() == 100

    def test_point_isolated_at_depth_one_closed_form(self):
        # zeros are constant (leaf at the root's child); the far point splits
        # off at depth 1 in every tree
        X = np.concatenate([np.zeros((100, 1)), [[1000.0]]])
        model = fit_forest(X, t=64, psi=256, seed=3)
        assert model.psi == 101
        expected = 2.0 ** (-1.0 / average_path_length(101))
        assert score(model, np.array([1000.0])) == pytest.approx(expected, abs=1e-12)

    def test_duplicated_point_scores_half(self):
        X = np.full((50, 4), 3.25)
        model = fit_forest(X, t=10, psi=64, seed=0)
        scores = score_matrix(model, X)
        assert np.allclose(scores, 0.5, atol=1e-12)

    def test_scores_in_unit_interval(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(300, 5))
        scores = score_matrix(fit_forest(X, t=25, psi=128, seed=1), X)
        assert ((scores > 0) & (scores < 1)).all()

    def test_batch_permutation_invariance(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(120, 4))
        model = fit_forest(X, t=15, psi=64, seed=2)
        perm = rng.permutation(len(X))
        assert np.array_equal(score_matrix(model, X)[perm], score_matrix(model, X[perm]))

    def test_needs_two_vectors(self):
        with pytest.raises(ValueError):
            fit_forest(np.zeros((1, 2)), t=5, psi=8, seed=0)

    def test_feature_length_checked(self):
        X = np.zeros((10, 3))
        X[0] = 1
        model = fit_forest(X, t=5, psi=8, seed=0)
        with pytest.raises(ValueError):
            score(model, np.zeros(4))

    def test_tree_height_within_limit(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(400, 2))
        model = fit_forest(X, t=10, psi=256, seed=1)
        limit = math.ceil(math.log2(256))
        for tree in model.trees:
            # leaf path = depth + c(size); depth alone never exceeds the cap
            depth = np.zeros(len(tree.feature), dtype=int)
            for node in range(len(tree.feature)):
                if tree.feature[node] >= 0:
                    depth[tree.left[node]] = depth[node] + 1
                    depth[tree.right[node]] = depth[node] + 1
            assert depth.max() <= limit

    def test_monotone_dominance_sign_test(self):
        rng = np.random.default_rng(10)
        background = rng.normal(0.1, 0.02, size=(600, 5))
        b = np.full(5, 0.35)
        a = b + 0.4  # dominates b in every coordinate
        data = np.concatenate([background, [b], [a]])
        wins = 0
        mean_a = []
        mean_b = []
        for seed in range(20):
            model = fit_forest(data, t=50, psi=128, seed=seed)
            sa = score(model, a)
            sb = score(model, b)
            mean_a.append(sa)
            mean_b.append(sb)
            wins += sa >= sb
        assert np.mean(mean_a) >= np.mean(mean_b)
        assert binomtest(wins, 20, 0.5, alternative="greater").pvalue < 0.01

    def test_serialization_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(100, 3))
        model = fit_forest(X, t=12, psi=32, seed=7)
        path = tmp_path / "forest.json"
        save_forest(model, path)
        loaded = load_forest(path)
        assert np.array_equal(score_matrix(model, X), score_matrix(loaded, X))

    def test_serialization_rejects_unknown_format(self, tmp_path):
        path = tmp_path / "forest.json"
        path.write_text('{"format": "other"}')
        with pytest.raises(ValueError):
            load_forest(path)


class TestFlagging:
    def make_verdicts(self):
        from kpclean.detect import OutlierVerdict

        return [
            OutlierVerdict("p0", 0, 0.9, annotated=True),
            OutlierVerdict("p0", 1, 0.3, annotated=True),
            OutlierVerdict("p1", 0, 0.95, annotated=False),
        ]

    def test_flag_threshold_one_empty(self):
        assert flag(self.make_verdicts(), 1.0) == []

    def test_flag_respects_annotated(self):
        flagged = flag(self.make_verdicts(), 0.5)
        assert [(v.pose_id, v.joint_index) for v in flagged] == [("p0", 0)]

    def test_flag_boundary_inclusive(self):
        flagged = flag(self.make_verdicts(), 0.9)
        assert len(flagged) == 1

    def test_apply_threshold_consistency(self):
        updated = apply_threshold(self.make_verdicts(), 0.5)
        for v in updated:
            assert v.flagged == (v.annotated and v.score >= 0.5)
            assert v.threshold_used == 0.5

    def test_csv_and_json_dumps(self):
        updated = apply_threshold(self.make_verdicts(), 0.5)
        csv = verdicts_to_csv(updated)
        assert csv.splitlines()[0] == "pose_id,joint_index,annotated,score,flagged"
        assert len(csv.splitlines()) == 4
        roundtrip = verdicts_from_json(verdicts_to_json(updated))
        assert roundtrip == updated


class TestEndToEndDetection:
    def test_planted_faults_detected(self, small_synth):
        from kpclean.calibrate import calibrate_threshold

        records = extract_distances(small_synth.bundle, small_synth.predictions)
        vectors = build_features(records, 5)
        model = fit_forest(vectors, t=100, psi=256, seed=17)
        verdicts = score_verdicts(model, vectors)
        threshold = calibrate_threshold(verdicts).threshold
        flagged = {(v.pose_id, v.joint_index) for v in flag(verdicts, threshold)}
        tp = len(flagged & small_synth.faulty)
        assert tp / len(flagged) >= 0.9
        assert tp / len(small_synth.faulty) >= 0.9


class TestFeatureDimXY:
    def test_xy_vectors_have_double_width(self, small_synth):
        records = extract_distances(small_synth.bundle, small_synth.predictions)
        vectors = build_features(records, 5, feature_dim="xy")
        assert vectors[0].features.shape == (10,)

    def test_xy_components_consistent_with_scalar(self, small_synth):
        records = extract_distances(small_synth.bundle, small_synth.predictions)
        scalar = {(v.pose_id, v.joint_index): v for v in build_features(records, 5)}
        for v in build_features(records, 5, feature_dim="xy"):
            s = scalar[(v.pose_id, v.joint_index)]
            norms = np.hypot(v.features[0::2], v.features[1::2])
            assert norms == pytest.approx(s.features, abs=1e-9)

    def test_xy_detection_still_works(self, small_synth):
        from kpclean.calibrate import calibrate_threshold

        records = extract_distances(small_synth.bundle, small_synth.predictions)
        vectors = build_features(records, 5, feature_dim="xy")
        model = fit_forest(vectors, t=100, psi=256, seed=17)
        verdicts = score_verdicts(model, vectors)
        threshold = calibrate_threshold(verdicts).threshold
        flagged = {(v.pose_id, v.joint_index) for v in flag(verdicts, threshold)}
        tp = len(flagged & small_synth.faulty)
        assert tp / len(flagged) >= 0.9
        assert tp / len(small_synth.faulty) >= 0.9

    def test_unknown_feature_dim_rejected(self):
        with pytest.raises(ValueError):
            build_features([rec("p", 0, "m0", 1.0)], 1, feature_dim="polar")


class TestScorerProtocol:
    def test_isolation_forest_scorer_adapter(self, small_synth):
        from kpclean.detect import AnomalyScorer, IsolationForestScorer

        records = extract_distances(small_synth.bundle, small_synth.predictions)
        vectors = build_features(records, 5)
        scorer = IsolationForestScorer(t=20, psi=64)
        assert isinstance(scorer, AnomalyScorer)
        scorer.fit(vectors, seed=4)
        scores = scorer.scores(vectors)
        assert len(scores) == len(vectors)
        assert ((scores > 0) & (scores < 1)).all()

    def test_scoring_before_fit_rejected(self):
        from kpclean.detect import IsolationForestScorer

        with pytest.raises(ValueError):
            IsolationForestScorer().scores([])
