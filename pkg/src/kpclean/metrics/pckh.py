"""PCKh evaluation for MPII-style annotations, reference protocol.

A keypoint is correct iff its prediction lies within ``alpha * L_head`` of
the annotation (boundary inclusive), with L_head = 0.6 x head-box diagonal.
The overall score pools all labeled joints except pelvis and thorax, as in
the standard evaluation script; per-joint groups average the left and right
percentages.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence, Set, Tuple

import numpy as np

from ..ingest import DatasetBundle
from ..skeleton import MPII16, PredictionSet
from .report import MetricReport

HEAD_BIAS = 0.6
# Joints excluded from the pooled overall score.
MASKED_JOINTS = (6, 7)  # pelvis, thorax
JOINT_GROUPS = (
    ("Head", (9,)),
    ("Shoulder", (12, 13)),
    ("Elbow", (11, 14)),
    ("Wrist", (10, 15)),
    ("Hip", (2, 3)),
    ("Knee", (1, 4)),
    ("Ankle", (0, 5)),
)

ExcludeSet = Set[Tuple[str, int]]


def pckh(
    bundle: DatasetBundle,
    predictions: PredictionSet,
    alphas: Sequence[float] = (0.5, 0.1),
    exclude: Optional[ExcludeSet] = None,
    label: str = "RAW",
) -> MetricReport:
    """Evaluate PCKh at the given alphas; per-joint breakdown included.

    Poses without a head box are skipped. Keypoints listed in ``exclude``
    are treated as unlabeled. A pose without a prediction counts all its
    labeled joints as incorrect.
    """
    for alpha in alphas:
        if alpha <= 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
    if bundle.convention is not MPII16:
        raise ValueError("pckh requires an MPII16 bundle")
    exclude = exclude or set()

    n_joints = bundle.convention.joint_count
    correct = np.zeros((len(alphas), n_joints), dtype=np.int64)
    counts = np.zeros(n_joints, dtype=np.int64)
    pose_count = 0
    for ann in bundle.usable:
        head_len = ann.head_length(HEAD_BIAS)
        if head_len is None or head_len <= 0:
            continue
        pose_count += 1
        pred = predictions.entries.get(ann.pose_id)
        for j, kp in enumerate(ann.keypoints):
            if not kp.labeled or (ann.pose_id, j) in exclude:
                continue
            counts[j] += 1
            if pred is None:
                continue
            d = math.hypot(pred[j, 0] - kp.x, pred[j, 1] - kp.y)
            for a, alpha in enumerate(alphas):
                if d <= alpha * head_len:
                    correct[a, j] += 1

    metrics = {}
    per_joint = {}
    mask = np.ones(n_joints, dtype=bool)
    mask[list(MASKED_JOINTS)] = False
    for a, alpha in enumerate(alphas):
        name = f"PCKh@{alpha:g}"
        pooled_count = counts[mask].sum()
        if pooled_count == 0:
            raise ValueError("no evaluable keypoints")
        metrics[name] = 100.0 * correct[a, mask].sum() / pooled_count
        with np.errstate(invalid="ignore"):
            joint_pct = np.where(counts > 0, 100.0 * correct[a] / np.maximum(counts, 1), np.nan)
        breakdown = {
            bundle.convention.joint_names[j]: float(joint_pct[j]) for j in range(n_joints)
        }
        for group, members in JOINT_GROUPS:
            values = [joint_pct[m] for m in members if not math.isnan(joint_pct[m])]
            breakdown[group] = float(np.mean(values)) if values else float("nan")
        per_joint[name] = breakdown

    return MetricReport(
        convention=bundle.convention.name,
        metrics=metrics,
        per_joint=per_joint,
        pose_count=pose_count,
        keypoint_count=int(counts.sum()),
        label=label,
    )
