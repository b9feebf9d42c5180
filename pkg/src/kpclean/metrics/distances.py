"""Per-keypoint prediction-annotation distances across a model ensemble.

COCO poses are matched to predictions greedily at a loose OKS threshold;
MPII poses join directly on pose id. Matched poses yield one record per
(pose, joint, model), covering unlabeled joints too (measured against
their placeholder coordinates) so that downstream scoring can treat
keypoints without annotations as a reference population. Poses a model
failed to match produce records marked ``missing`` for later imputation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

from ..ingest import DatasetBundle
from ..skeleton import COCO17, MPII16, PredictionSet
from .oks import match_predictions
from .pckh import HEAD_BIAS

FEATURE_NORMS = ("headsize", "pixel")


@dataclass(frozen=True, slots=True)
class JointDistanceRecord:
    pose_id: str
    joint_index: int
    model_id: str
    raw_distance: float
    normalized_distance: float
    per_joint_oks: Optional[float]  # COCO only
    annotated: bool
    missing: bool = False
    # signed displacement components, same normalizer as normalized_distance
    normalized_dx: float = math.nan
    normalized_dy: float = math.nan


def _missing_records(ann, model_id: str) -> List[JointDistanceRecord]:
    return [
        JointDistanceRecord(
            pose_id=ann.pose_id,
            joint_index=j,
            model_id=model_id,
            raw_distance=math.nan,
            normalized_distance=math.nan,
            per_joint_oks=None,
            annotated=ann.keypoints[j].labeled,
            missing=True,
        )
        for j in range(len(ann.keypoints))
    ]


def extract_distances(
    bundle: DatasetBundle,
    prediction_sets: Sequence[PredictionSet],
    iou_threshold: float = 0.5,
    feature_norm: str = "headsize",
) -> List[JointDistanceRecord]:
    """Distance records per (pose, joint, model) for every matched pose."""
    if not prediction_sets:
        raise ValueError("need at least one prediction set")
    if feature_norm not in FEATURE_NORMS:
        raise ValueError(f"feature_norm must be one of {FEATURE_NORMS}")

    records: List[JointDistanceRecord] = []
    if bundle.convention is COCO17:
        by_image = bundle.by_image()
        pose_to_image = {a.pose_id: a.image_id for a in bundle.annotations}
        for pset in prediction_sets:
            preds_by_image: dict[str, list] = {}
            for pose_id, joints in pset.entries.items():
                img = pose_to_image.get(pose_id)
                if img is not None:
                    preds_by_image.setdefault(img, []).append((pose_id, joints))
            for image_id, anns in by_image.items():
                usable = [a for a in anns if not a.is_empty and not a.iscrowd]
                matching = match_predictions(
                    usable, preds_by_image.get(image_id, []), iou_threshold, bundle.convention
                )
                matched = {a: p for p, a, _ in matching.pairs}
                for ann in usable:
                    pred_id = matched.get(ann.pose_id)
                    if pred_id is None:
                        records.extend(_missing_records(ann, pset.model_id))
                        continue
                    joints = pset.entries[pred_id]
                    s = math.sqrt(ann.area)
                    for j, kp in enumerate(ann.keypoints):
                        dx = joints[j, 0] - kp.x
                        dy = joints[j, 1] - kp.y
                        d = math.hypot(dx, dy)
                        k = bundle.convention.oks_k[j]
                        norm = d / (s * k)
                        records.append(
                            JointDistanceRecord(
                                pose_id=ann.pose_id,
                                joint_index=j,
                                model_id=pset.model_id,
                                raw_distance=d,
                                normalized_distance=norm,
                                per_joint_oks=math.exp(-0.5 * norm * norm),
                                annotated=kp.labeled,
                                normalized_dx=dx / (s * k),
                                normalized_dy=dy / (s * k),
                            )
                        )
    elif bundle.convention is MPII16:
        for pset in prediction_sets:
            for ann in bundle.usable:
                joints = pset.entries.get(ann.pose_id)
                if joints is None:
                    records.extend(_missing_records(ann, pset.model_id))
                    continue
                head_len = ann.head_length(HEAD_BIAS)
                if feature_norm == "headsize":
                    if head_len is None or head_len <= 0:
                        continue  # no normalizer available for this pose
                    norm_len = head_len
                else:
                    norm_len = 1.0
                for j, kp in enumerate(ann.keypoints):
                    dx = joints[j, 0] - kp.x
                    dy = joints[j, 1] - kp.y
                    d = math.hypot(dx, dy)
                    records.append(
                        JointDistanceRecord(
                            pose_id=ann.pose_id,
                            joint_index=j,
                            model_id=pset.model_id,
                            raw_distance=d,
                            normalized_distance=d / norm_len,
                            per_joint_oks=None,
                            annotated=kp.labeled,
                            normalized_dx=dx / norm_len,
                            normalized_dy=dy / norm_len,
                        )
                    )
    else:
        raise ValueError(f"unsupported convention {bundle.convention.name}")
    return records
