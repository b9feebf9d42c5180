"""Core domain model: skeleton conventions, keypoints, poses, predictions.

All types are immutable after construction and safe to share across threads.
Coordinates are image pixels, origin top-left.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np


class Visibility(enum.IntEnum):
    NOT_LABELED = 0
    OCCLUDED = 1
    VISIBLE = 2


class ErrorClass(enum.Enum):
    MISSING_ANNOTATION = "missing_annotation"
    FALSE_LABEL = "false_label"
    INCORRECT_POSITION = "incorrect_position"
    LEFT_RIGHT_SWAP = "left_right_swap"
    VISIBILITY_ERROR = "visibility_error"


# Classes whose presence marks a keypoint annotation as faulty for cleaning
# and precision/recall purposes. Visibility errors alone do not count: the
# evaluated metrics ignore the visibility flag.
FAULTY_CLASSES = frozenset(
    {
        ErrorClass.MISSING_ANNOTATION,
        ErrorClass.FALSE_LABEL,
        ErrorClass.INCORRECT_POSITION,
        ErrorClass.LEFT_RIGHT_SWAP,
    }
)


class Difficulty(enum.Enum):
    EASY = "easy"
    HARD = "hard"
    IMPOSSIBLE = "impossible"


@dataclass(frozen=True, slots=True)
class SkeletonConvention:
    """Joint layout of a dataset family plus its metric constants.

    ``oks_k`` holds the per-joint OKS constants k_i (twice the published
    per-joint sigmas); COCO only. ``head_pair`` names the joint indices of
    the head segment; MPII only.
    """

    name: str
    joint_names: Tuple[str, ...]
    flip_pairs: Tuple[Tuple[int, int], ...]
    oks_k: Optional[Tuple[float, ...]] = None
    head_pair: Optional[Tuple[int, int]] = None

    def __post_init__(self) -> None:
        n = len(self.joint_names)
        for left, right in self.flip_pairs:
            if left == right or not (0 <= left < n and 0 <= right < n):
                raise ValueError(f"invalid flip pair ({left}, {right}) for {n} joints")
        if self.oks_k is not None:
            if len(self.oks_k) != n:
                raise ValueError("oks_k length must equal joint count")
            if any(k <= 0 for k in self.oks_k):
                raise ValueError("all oks_k constants must be positive")

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    def flip_index(self) -> Tuple[int, ...]:
        """Permutation mapping each joint to its left/right counterpart."""
        idx = list(range(self.joint_count))
        for left, right in self.flip_pairs:
            idx[left], idx[right] = right, left
        return tuple(idx)


# Per-joint OKS sigmas of the reference COCO keypoint evaluator; k_i = 2*sigma_i.
_COCO_SIGMAS = (
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
    0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089,
)

COCO17 = SkeletonConvention(
    name="COCO17",
    joint_names=(
        "nose", "left_eye", "right_eye", "left_ear", "right_ear",
        "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
        "left_wrist", "right_wrist", "left_hip", "right_hip",
        "left_knee", "right_knee", "left_ankle", "right_ankle",
    ),
    flip_pairs=((1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16)),
    oks_k=tuple(2.0 * s for s in _COCO_SIGMAS),
)

MPII16 = SkeletonConvention(
    name="MPII16",
    joint_names=(
        "right_ankle", "right_knee", "right_hip", "left_hip", "left_knee",
        "left_ankle", "pelvis", "thorax", "upper_neck", "head_top",
        "right_wrist", "right_elbow", "right_shoulder", "left_shoulder",
        "left_elbow", "left_wrist",
    ),
    flip_pairs=((0, 5), (1, 4), (2, 3), (10, 15), (11, 14), (12, 13)),
    head_pair=(8, 9),
)

_CONVENTIONS = {c.name: c for c in (COCO17, MPII16)}

# MPII person scale is expressed in multiples of 200 px.
MPII_SCALE_UNIT = 200.0


def get_convention(name: str) -> SkeletonConvention:
    try:
        return _CONVENTIONS[name]
    except KeyError:
        raise KeyError(f"unknown skeleton convention {name!r}; known: {sorted(_CONVENTIONS)}")


@dataclass(frozen=True, slots=True)
class Keypoint:
    x: float
    y: float
    visibility: Visibility = Visibility.VISIBLE

    @property
    def labeled(self) -> bool:
        return self.visibility != Visibility.NOT_LABELED


# Placeholder coordinates carried by unlabeled keypoints.
PLACEHOLDER_XY = (0.0, 0.0)


def unlabeled_keypoint() -> Keypoint:
    return Keypoint(*PLACEHOLDER_XY, Visibility.NOT_LABELED)


@dataclass(frozen=True, slots=True)
class PoseAnnotation:
    """One person's annotated keypoint set with its box geometry.

    ``bbox`` is (x, y, w, h). MPII poses synthesize a square bbox of side
    ``scale * 200`` centered on ``center``; their ``head_box`` is
    (x1, y1, x2, y2) when the split provides one.
    """

    pose_id: str
    image_id: str
    keypoints: Tuple[Keypoint, ...]
    bbox: Tuple[float, float, float, float]
    area: float
    head_box: Optional[Tuple[float, float, float, float]] = None
    center: Optional[Tuple[float, float]] = None
    scale: Optional[float] = None
    iscrowd: bool = False

    def __post_init__(self) -> None:
        if self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise ValueError(f"pose {self.pose_id}: bbox w/h must be positive, got {self.bbox}")
        if self.area <= 0:
            raise ValueError(f"pose {self.pose_id}: area must be positive")
        for i, kp in enumerate(self.keypoints):
            if not (math.isfinite(kp.x) and math.isfinite(kp.y)):
                raise ValueError(f"pose {self.pose_id}: non-finite coordinate at joint {i}")

    @property
    def labeled_joints(self) -> Tuple[int, ...]:
        return tuple(i for i, kp in enumerate(self.keypoints) if kp.labeled)

    @property
    def num_labeled(self) -> int:
        return sum(1 for kp in self.keypoints if kp.labeled)

    @property
    def is_empty(self) -> bool:
        return self.num_labeled == 0

    def head_length(self, bias: float = 0.6) -> Optional[float]:
        """Head segment length used by PCKh: bias * head box diagonal."""
        if self.head_box is None:
            return None
        x1, y1, x2, y2 = self.head_box
        return bias * math.hypot(x2 - x1, y2 - y1)

    def with_keypoints(self, keypoints: Sequence[Keypoint]) -> "PoseAnnotation":
        return PoseAnnotation(
            pose_id=self.pose_id,
            image_id=self.image_id,
            keypoints=tuple(keypoints),
            bbox=self.bbox,
            area=self.area,
            head_box=self.head_box,
            center=self.center,
            scale=self.scale,
            iscrowd=self.iscrowd,
        )

    def flipped_keypoints(self, convention: SkeletonConvention) -> Tuple[Keypoint, ...]:
        """Keypoint list with every left/right pair exchanged."""
        perm = convention.flip_index()
        return tuple(self.keypoints[perm[i]] for i in range(len(self.keypoints)))


@dataclass(frozen=True, slots=True)
class PredictionSet:
    """Predicted keypoints of a single model, keyed by pose id.

    Entries are read-only float arrays of shape (joint_count, 3) holding
    x, y and a confidence in [0, 1].
    """

    model_id: str
    convention: SkeletonConvention
    entries: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for pose_id, arr in self.entries.items():
            if arr.shape != (self.convention.joint_count, 3):
                raise ValueError(
                    f"model {self.model_id}, pose {pose_id}: expected shape "
                    f"({self.convention.joint_count}, 3), got {arr.shape}"
                )
            conf = arr[:, 2]
            if np.any(conf < 0) or np.any(conf > 1):
                raise ValueError(f"model {self.model_id}, pose {pose_id}: confidence outside [0, 1]")
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.entries)


def in_bbox(kp: Keypoint, ann: PoseAnnotation) -> bool:
    """True iff a labeled keypoint lies inside the pose bbox, boundary inclusive."""
    if not kp.labeled:
        raise ValueError("in_bbox is only defined for labeled keypoints")
    x, y, w, h = ann.bbox
    return x <= kp.x <= x + w and y <= kp.y <= y + h


def outside_bbox_rate(annotations: Sequence[PoseAnnotation], joint_count: int) -> Tuple[float, np.ndarray]:
    """Fraction of labeled keypoints outside their pose bbox.

    Returns the overall fraction and a per-joint array (nan where a joint
    has no labeled instances).
    """
    labeled = np.zeros(joint_count, dtype=np.int64)
    outside = np.zeros(joint_count, dtype=np.int64)
    for ann in annotations:
        for j, kp in enumerate(ann.keypoints):
            if not kp.labeled:
                continue
            labeled[j] += 1
            if not in_bbox(kp, ann):
                outside[j] += 1
    total = int(labeled.sum())
    if total == 0:
        raise ValueError("outside_bbox_rate needs at least one labeled keypoint")
    with np.errstate(invalid="ignore", divide="ignore"):
        per_joint = np.where(labeled > 0, outside / np.maximum(labeled, 1), np.nan)
    return float(outside.sum()) / total, per_joint
