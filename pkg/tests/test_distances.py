import math

import numpy as np
import pytest

from kpclean.metrics import extract_distances
from kpclean.skeleton import COCO17, MPII16, PredictionSet

from conftest import (
    make_coco_bundle,
    make_coco_pose,
    make_mpii_bundle,
    make_mpii_pose,
    predictions_from_bundle,
)


def test_identical_predictions_zero_distance():
    bundle = make_mpii_bundle([make_mpii_pose("p0")])
    preds = predictions_from_bundle(bundle)
    records = extract_distances(bundle, [preds])
    assert records
    for r in records:
        if r.annotated:
            assert r.raw_distance == pytest.approx(0.0)
            assert r.normalized_distance == pytest.approx(0.0)


def test_m_models_yield_m_records_per_joint():
    bundle = make_mpii_bundle([make_mpii_pose("p0"), make_mpii_pose("p1", center=(300.0, 100.0))])
    psets = [predictions_from_bundle(bundle, model_id=f"m{i}", jitter=2.0, seed=i) for i in range(5)]
    records = extract_distances(bundle, psets)
    per_joint = {}
    for r in records:
        per_joint.setdefault((r.pose_id, r.joint_index), []).append(r)
    for key, recs in per_joint.items():
        assert len(recs) == 5, key
        assert len({r.model_id for r in recs}) == 5


def test_mpii_headsize_normalization():
    pose = make_mpii_pose("p0")
    bundle = make_mpii_bundle([pose])
    preds = predictions_from_bundle(bundle)
    arr = np.array(preds.entries["p0"], copy=True)
    arr[2, 0] += 10.0  # move one joint by 10 px
    preds = PredictionSet(model_id="m0", convention=MPII16, entries={"p0": arr})
    records = extract_distances(bundle, [preds])
    rec = next(r for r in records if r.joint_index == 2)
    head_len = pose.head_length()
    assert rec.raw_distance == pytest.approx(10.0)
    assert rec.normalized_distance == pytest.approx(10.0 / head_len)
    assert rec.per_joint_oks is None


def test_mpii_pixel_normalization():
    bundle = make_mpii_bundle([make_mpii_pose("p0")])
    preds = predictions_from_bundle(bundle)
    arr = np.array(preds.entries["p0"], copy=True)
    arr[2, 0] += 10.0
    preds = PredictionSet(model_id="m0", convention=MPII16, entries={"p0": arr})
    records = extract_distances(bundle, [preds], feature_norm="pixel")
    rec = next(r for r in records if r.joint_index == 2)
    assert rec.normalized_distance == pytest.approx(10.0)


def test_coco_normalization_closed_form():
    pose = make_coco_pose("a1")
    bundle = make_coco_bundle([pose])
    preds = predictions_from_bundle(bundle)
    arr = np.array(preds.entries["a1"], copy=True)
    arr[3, 1] += 7.0
    preds = PredictionSet(model_id="m0", convention=COCO17, entries={"a1": arr})
    records = extract_distances(bundle, [preds])
    rec = next(r for r in records if r.joint_index == 3)
    s = math.sqrt(pose.area)
    k = COCO17.oks_k[3]
    assert rec.normalized_distance == pytest.approx(7.0 / (s * k), abs=1e-12)
    assert rec.per_joint_oks == pytest.approx(math.exp(-0.5 * (7.0 / (s * k)) ** 2), abs=1e-12)


def test_unlabeled_joints_measured_against_placeholder():
    mask = [True] * 16
    mask[6] = False
    pose = make_mpii_pose("p0", labeled_mask=mask)
    bundle = make_mpii_bundle([pose])
    preds = predictions_from_bundle(bundle)
    records = extract_distances(bundle, [preds])
    rec = next(r for r in records if r.joint_index == 6)
    assert not rec.annotated
    # prediction for the unlabeled joint sits at the pose center; the
    # placeholder annotation is the origin
    pred = preds.entries["p0"][6]
    assert rec.raw_distance == pytest.approx(math.hypot(pred[0], pred[1]))


def test_missing_model_match_marked():
    pose = make_mpii_pose("p0")
    bundle = make_mpii_bundle([pose])
    empty = PredictionSet(model_id="m0", convention=MPII16, entries={})
    records = extract_distances(bundle, [empty])
    assert len(records) == 16
    assert all(r.missing for r in records)
    assert all(math.isnan(r.raw_distance) for r in records)


def test_coco_unmatched_at_loose_threshold_marked_missing():
    pose = make_coco_pose("a1")
    bundle = make_coco_bundle([pose])
    preds = predictions_from_bundle(bundle, offset=(5000.0, 5000.0))
    records = extract_distances(bundle, [preds], iou_threshold=0.5)
    assert all(r.missing for r in records)


def test_needs_at_least_one_model():
    bundle = make_mpii_bundle([make_mpii_pose("p0")])
    with pytest.raises(ValueError):
        extract_distances(bundle, [])
