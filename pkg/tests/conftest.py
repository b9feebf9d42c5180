from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from kpclean.ingest import DatasetBundle, ImageInfo
from kpclean.skeleton import (
    COCO17,
    MPII16,
    Keypoint,
    PoseAnnotation,
    PredictionSet,
    Visibility,
    unlabeled_keypoint,
)
from kpclean.synth import make_synthetic

GOLDEN_DIR = Path(__file__).parent / "golden"


def grid_keypoints(center, side, n, labeled_mask=None):
    """n keypoints on a ring inside the box; deterministic positions."""
    cx, cy = center
    angles = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    kps = []
    for i, a in enumerate(angles):
        if labeled_mask is not None and not labeled_mask[i]:
            kps.append(unlabeled_keypoint())
        else:
            kps.append(
                Keypoint(cx + 0.35 * side * np.cos(a), cy + 0.35 * side * np.sin(a), Visibility.VISIBLE)
            )
    return tuple(kps)


def make_mpii_pose(
    pose_id,
    image_id="img_a.jpg",
    center=(100.0, 100.0),
    side=100.0,
    labeled_mask=None,
    head_box="auto",
):
    kps = grid_keypoints(center, side, MPII16.joint_count, labeled_mask)
    if head_box == "auto":
        head_box = (center[0] - 15, center[1] - side * 0.45, center[0] + 15, center[1] - side * 0.45 + 30)
    return PoseAnnotation(
        pose_id=pose_id,
        image_id=image_id,
        keypoints=kps,
        bbox=(center[0] - side / 2, center[1] - side / 2, side, side),
        area=side * side,
        head_box=head_box,
        center=center,
        scale=side / 200.0,
    )


def make_mpii_bundle(poses):
    images = {}
    for ann in poses:
        images.setdefault(ann.image_id, ImageInfo(file_name=ann.image_id))
    return DatasetBundle(
        convention=MPII16,
        annotations=tuple(poses),
        images=images,
        source_digest="test-fixture",
    )


def make_coco_pose(pose_id, image_id="1", center=(200.0, 200.0), side=120.0, labeled_mask=None, iscrowd=False):
    kps = grid_keypoints(center, side, COCO17.joint_count, labeled_mask)
    return PoseAnnotation(
        pose_id=pose_id,
        image_id=image_id,
        keypoints=kps,
        bbox=(center[0] - side / 2, center[1] - side / 2, side, side),
        area=side * side * 0.6,
        iscrowd=iscrowd,
    )


def make_coco_bundle(poses, image_ids=None):
    images = {}
    for ann in poses:
        images.setdefault(ann.image_id, ImageInfo(file_name=f"{ann.image_id}.jpg", width=640, height=480))
    if image_ids:
        for img in image_ids:
            images.setdefault(img, ImageInfo(file_name=f"{img}.jpg", width=640, height=480))
    return DatasetBundle(
        convention=COCO17,
        annotations=tuple(poses),
        images=images,
        source_digest="test-fixture",
    )


def predictions_from_bundle(bundle, model_id="m0", offset=(0.0, 0.0), confidence=0.9, jitter=0.0, seed=0):
    """Prediction set echoing annotations, optionally offset/jittered.

    Unlabeled joints get predictions at the pose center (plausible guess).
    """
    rng = np.random.default_rng(seed)
    entries = {}
    for ann in bundle.annotations:
        arr = np.empty((bundle.convention.joint_count, 3))
        cx = ann.bbox[0] + ann.bbox[2] / 2
        cy = ann.bbox[1] + ann.bbox[3] / 2
        for j, kp in enumerate(ann.keypoints):
            base = (kp.x, kp.y) if kp.labeled else (cx, cy)
            arr[j] = (
                base[0] + offset[0] + (rng.normal(0, jitter) if jitter else 0.0),
                base[1] + offset[1] + (rng.normal(0, jitter) if jitter else 0.0),
                confidence,
            )
        entries[ann.pose_id] = arr
    return PredictionSet(model_id=model_id, convention=bundle.convention, entries=entries)


@pytest.fixture(scope="session")
def golden_dir():
    return GOLDEN_DIR


@pytest.fixture(scope="session")
def small_synth():
    """Small planted-fault dataset shared by detector tests."""
    return make_synthetic(n_poses=140, n_models=5, seed=11)
