"""Synthetic pose datasets with planted label errors, for oracle testing.

The generator emits an MPII-style bundle plus an ensemble of simulated
model predictions. Ground truth about what was planted comes along, so
detector precision and recall can be measured exactly:

  * inlier keypoints: annotation = true position + small Gaussian noise;
  * faulty keypoints (a configurable fraction of annotated ones): either
    shifted by several head lengths or left/right swapped on a wide flip
    pair, always far beyond the inlier noise;
  * unannotated keypoints: the annotation is the placeholder origin while
    models still predict, at a controlled normalized distance chosen just
    below the planted fault band. That mirrors the working regime of the
    calibration rule: real faults deviate at least as much as predictions
    for keypoints nobody labeled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Tuple

import numpy as np

from .ingest import DatasetBundle, ImageInfo
from .skeleton import (
    MPII16,
    MPII_SCALE_UNIT,
    Keypoint,
    PoseAnnotation,
    PredictionSet,
    Visibility,
    unlabeled_keypoint,
)

# Joint offsets from the pose center in units of the bbox side.
_TEMPLATE = np.array(
    [
        (-0.28, 0.45),  # right_ankle
        (-0.18, 0.22),  # right_knee
        (-0.10, 0.00),  # right_hip
        (0.10, 0.00),   # left_hip
        (0.18, 0.22),   # left_knee
        (0.28, 0.45),   # left_ankle
        (0.00, 0.00),   # pelvis
        (0.00, -0.22),  # thorax
        (0.00, -0.30),  # upper_neck
        (0.00, -0.42),  # head_top
        (-0.30, 0.05),  # right_wrist
        (-0.25, -0.12), # right_elbow
        (-0.16, -0.25), # right_shoulder
        (0.16, -0.25),  # left_shoulder
        (0.25, -0.12),  # left_elbow
        (0.30, 0.05),   # left_wrist
    ]
)

HEAD_BOX_SIDE = 50.0
# L_head = 0.6 * diagonal of the head box
L_HEAD = 0.6 * HEAD_BOX_SIDE * math.sqrt(2.0)

# Minimum left/right separation (in head lengths) for a plantable swap.
MIN_SWAP_SEPARATION = 1.9
# Planted shift magnitudes, in head lengths.
SHIFT_RANGE = (1.8, 4.0)
# Normalized deviation ring for predictions of unannotated keypoints.
UNANNOTATED_RING = (1.45, 0.05)


@dataclass(frozen=True)
class SyntheticDataset:
    bundle: DatasetBundle
    predictions: Tuple[PredictionSet, ...]
    faulty: FrozenSet[Tuple[str, int]]
    not_labeled: FrozenSet[Tuple[str, int]]
    true_positions: Dict[Tuple[str, int], Tuple[float, float]]
    inlier_noise: float


def make_synthetic(
    n_poses: int = 625,
    n_models: int = 5,
    fault_rate: float = 0.02,
    not_labeled_rate: float = 0.06,
    inlier_noise: float = 2.0,
    swap_fraction: float = 0.3,
    seed: int = 0,
    merged_modes: bool = False,
) -> SyntheticDataset:
    """Build a synthetic MPII-style dataset with planted faults.

    ``merged_modes=True`` places unannotated predictions at inlier-scale
    deviations instead of the separated ring, collapsing the bimodal score
    structure (used to exercise ambiguity handling).
    """
    rng = np.random.default_rng(seed)
    n_joints = MPII16.joint_count
    model_noises = np.linspace(1.5, 3.5, n_models)

    annotations: List[PoseAnnotation] = []
    images: Dict[str, ImageInfo] = {}
    true_positions: Dict[Tuple[str, int], Tuple[float, float]] = {}
    not_labeled: set[Tuple[str, int]] = set()
    pose_geometry: Dict[str, Tuple[np.ndarray, float]] = {}

    for i in range(n_poses):
        pose_id = f"synth_{i:05d}"
        image_id = f"img_{i:05d}.jpg"
        images[image_id] = ImageInfo(file_name=image_id, width=256, height=256)
        side = rng.uniform(160.0, 200.0)
        center = np.array([128.0, 132.0]) + rng.uniform(-15.0, 15.0, size=2)
        truth = center + _TEMPLATE * side + rng.normal(0.0, 0.02 * side, size=(n_joints, 2))
        pose_geometry[pose_id] = (truth, side)

        head_center = center + np.array([0.0, -0.36 * side])
        head_box = (
            head_center[0] - HEAD_BOX_SIDE / 2,
            head_center[1] - HEAD_BOX_SIDE / 2,
            head_center[0] + HEAD_BOX_SIDE / 2,
            head_center[1] + HEAD_BOX_SIDE / 2,
        )

        keypoints = []
        for j in range(n_joints):
            true_xy = (float(truth[j, 0]), float(truth[j, 1]))
            true_positions[(pose_id, j)] = true_xy
            if rng.uniform() < not_labeled_rate:
                not_labeled.add((pose_id, j))
                keypoints.append(unlabeled_keypoint())
            else:
                keypoints.append(
                    Keypoint(
                        true_xy[0] + rng.normal(0.0, inlier_noise),
                        true_xy[1] + rng.normal(0.0, inlier_noise),
                        Visibility.VISIBLE,
                    )
                )
        annotations.append(
            PoseAnnotation(
                pose_id=pose_id,
                image_id=image_id,
                keypoints=tuple(keypoints),
                bbox=(center[0] - side / 2, center[1] - side / 2, side, side),
                area=side * side,
                head_box=head_box,
                center=(float(center[0]), float(center[1])),
                scale=side / MPII_SCALE_UNIT,
            )
        )

    # Plant faults on annotated keypoints: swaps on wide pairs, then shifts.
    annotated_keys = [
        (ann.pose_id, j)
        for ann in annotations
        for j in range(n_joints)
        if ann.keypoints[j].labeled
    ]
    n_faulty = round(fault_rate * len(annotated_keys))
    n_swap_pairs = round(n_faulty * swap_fraction / 2.0)
    faulty: set[Tuple[str, int]] = set()
    by_id = {a.pose_id: a for a in annotations}

    wide_pairs = []
    for ann in annotations:
        truth, _ = pose_geometry[ann.pose_id]
        for left, right in MPII16.flip_pairs:
            if not (ann.keypoints[left].labeled and ann.keypoints[right].labeled):
                continue
            separation = float(np.linalg.norm(truth[left] - truth[right]))
            if separation >= MIN_SWAP_SEPARATION * L_HEAD:
                wide_pairs.append((ann.pose_id, left, right))
    order = rng.permutation(len(wide_pairs))
    for pick in order[:n_swap_pairs]:
        pose_id, left, right = wide_pairs[pick]
        ann = by_id[pose_id]
        kps = list(ann.keypoints)
        kps[left], kps[right] = kps[right], kps[left]
        by_id[pose_id] = ann.with_keypoints(kps)
        faulty.add((pose_id, left))
        faulty.add((pose_id, right))

    n_shift = n_faulty - 2 * n_swap_pairs
    shift_candidates = [k for k in annotated_keys if k not in faulty]
    order = rng.permutation(len(shift_candidates))
    for pick in order[:n_shift]:
        pose_id, j = shift_candidates[pick]
        ann = by_id[pose_id]
        kps = list(ann.keypoints)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        magnitude = rng.uniform(*SHIFT_RANGE) * L_HEAD
        kps[j] = Keypoint(
            kps[j].x + magnitude * math.cos(angle),
            kps[j].y + magnitude * math.sin(angle),
            kps[j].visibility,
        )
        by_id[pose_id] = ann.with_keypoints(kps)
        faulty.add((pose_id, j))

    annotations = [by_id[a.pose_id] for a in annotations]

    # Predictions track the true positions; unannotated keypoints get the
    # controlled ring around the placeholder origin instead.
    ring_base: Dict[Tuple[str, int], np.ndarray] = {}
    for key in not_labeled:
        angle = rng.uniform(0.0, 2.0 * math.pi)
        if merged_modes:
            radius = abs(rng.normal(0.0, 1.5 * inlier_noise))
        else:
            radius = rng.normal(*UNANNOTATED_RING) * L_HEAD
        ring_base[key] = radius * np.array([math.cos(angle), math.sin(angle)])

    predictions = []
    for m in range(n_models):
        entries: Dict[str, np.ndarray] = {}
        for ann in annotations:
            arr = np.empty((n_joints, 3))
            for j in range(n_joints):
                key = (ann.pose_id, j)
                if key in not_labeled:
                    base = ring_base[key]
                    conf = rng.uniform(0.1, 0.5)
                else:
                    base = np.asarray(true_positions[key])
                    conf = rng.uniform(0.6, 0.98)
                xy = base + rng.normal(0.0, model_noises[m], size=2)
                arr[j] = (xy[0], xy[1], conf)
            entries[ann.pose_id] = arr
        predictions.append(
            PredictionSet(model_id=f"model_{m}", convention=MPII16, entries=entries)
        )

    bundle = DatasetBundle(
        convention=MPII16,
        annotations=tuple(annotations),
        images=images,
        source_digest=f"synthetic-seed-{seed}",
    )
    return SyntheticDataset(
        bundle=bundle,
        predictions=tuple(predictions),
        faulty=frozenset(faulty),
        not_labeled=frozenset(not_labeled),
        true_positions=true_positions,
        inlier_noise=inlier_noise,
    )
