"""Object Keypoint Similarity and greedy prediction-annotation matching."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from ..skeleton import PoseAnnotation, SkeletonConvention


def oks(
    pred: np.ndarray,
    ann: PoseAnnotation,
    convention: SkeletonConvention,
) -> float:
    """Similarity in [0, 1] between predicted keypoints and an annotation.

    OKS = mean over labeled joints of exp(-d_i^2 / (2 s^2 k_i^2)) with
    s = sqrt(area). Raises on poses without labeled keypoints.
    """
    if convention.oks_k is None:
        raise ValueError(f"{convention.name} has no OKS constants")
    labeled = ann.labeled_joints
    if not labeled:
        raise ValueError(f"pose {ann.pose_id}: OKS undefined without labeled keypoints")
    s2 = ann.area
    total = 0.0
    for j in labeled:
        kp = ann.keypoints[j]
        d2 = (pred[j, 0] - kp.x) ** 2 + (pred[j, 1] - kp.y) ** 2
        k = convention.oks_k[j]
        total += math.exp(-d2 / (2.0 * s2 * k * k))
    return total / len(labeled)


@dataclass(frozen=True)
class Matching:
    """Greedy one-to-one assignment of predictions to annotations."""

    pairs: Tuple[Tuple[str, str, float], ...]  # (pred_id, ann_pose_id, oks)
    unmatched_predictions: Tuple[str, ...]
    unmatched_annotations: Tuple[str, ...]

    def annotation_for(self, pred_id: str) -> Optional[str]:
        for p, a, _ in self.pairs:
            if p == pred_id:
                return a
        return None

    def prediction_for(self, ann_id: str) -> Optional[str]:
        for p, a, _ in self.pairs:
            if a == ann_id:
                return p
        return None


def match_predictions(
    image_anns: Sequence[PoseAnnotation],
    image_preds: Sequence[Tuple[str, np.ndarray]],
    oks_threshold: float,
    convention: SkeletonConvention,
) -> Matching:
    """Greedily assign each prediction to the best unmatched annotation.

    Predictions are processed by descending confidence (mean joint score),
    ties broken by ascending prediction id; an assignment is accepted iff
    its OKS is >= ``oks_threshold``. Empty poses never match.
    """
    candidates = [a for a in image_anns if not a.is_empty and not a.iscrowd]
    order = sorted(
        range(len(image_preds)),
        key=lambda i: (-float(np.mean(image_preds[i][1][:, 2])), image_preds[i][0]),
    )
    taken: set[str] = set()
    pairs = []
    unmatched_preds = []
    for i in order:
        pred_id, joints = image_preds[i]
        best: Optional[PoseAnnotation] = None
        best_oks = -1.0
        for ann in candidates:
            if ann.pose_id in taken:
                continue
            value = oks(joints, ann, convention)
            if value > best_oks:
                best_oks = value
                best = ann
        if best is not None and best_oks >= oks_threshold:
            taken.add(best.pose_id)
            pairs.append((pred_id, best.pose_id, best_oks))
        else:
            unmatched_preds.append(pred_id)
    unmatched_anns = tuple(a.pose_id for a in candidates if a.pose_id not in taken)
    return Matching(
        pairs=tuple(pairs),
        unmatched_predictions=tuple(unmatched_preds),
        unmatched_annotations=unmatched_anns,
    )
