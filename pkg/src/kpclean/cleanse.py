"""Dataset cleaning: build AC/HC variants, account for removals, diff reports.

Cleaning never edits coordinates: a removed keypoint is marked unlabeled
(and so leaves every metric), and poses left without labels are dropped.
The manifest records what was removed, why, and from which source file.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .ingest import DatasetBundle
from .metrics.report import MetricReport
from .review.store import ReviewVerdict
from .skeleton import ErrorClass, unlabeled_keypoint

VARIANTS = ("RAW", "HC", "AC", "TC")

# Error classes whose majority vote removes a labeled keypoint. Visibility
# errors stay: top-down evaluation ignores the visibility flag. Missing
# annotations have no label to remove.
REMOVAL_CLASSES = frozenset(
    {ErrorClass.FALSE_LABEL, ErrorClass.INCORRECT_POSITION, ErrorClass.LEFT_RIGHT_SWAP}
)


@dataclass(frozen=True, slots=True)
class RemovalRecord:
    pose_id: str
    joint_index: int
    reason: str  # "flagged" | "human_verdict"

    def to_dict(self) -> dict:
        return {"pose_id": self.pose_id, "joint_index": self.joint_index, "reason": self.reason}


@dataclass(frozen=True)
class CleaningManifest:
    source_digest: str
    variant: str
    removed: Tuple[RemovalRecord, ...]
    annotated_total: int

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")

    @property
    def count(self) -> int:
        return len(self.removed)

    @property
    def fraction(self) -> float:
        return self.count / self.annotated_total if self.annotated_total else 0.0

    def to_dict(self) -> dict:
        return {
            "source_digest": self.source_digest,
            "variant": self.variant,
            "removed": [r.to_dict() for r in self.removed],
            "count": self.count,
            "annotated_total": self.annotated_total,
            "fraction": self.fraction,
        }

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, doc: dict) -> "CleaningManifest":
        return cls(
            source_digest=doc["source_digest"],
            variant=doc["variant"],
            removed=tuple(
                RemovalRecord(r["pose_id"], int(r["joint_index"]), r["reason"])
                for r in doc["removed"]
            ),
            annotated_total=int(doc["annotated_total"]),
        )


def apply_cleaning(
    bundle: DatasetBundle,
    removals: Sequence[RemovalRecord],
    variant: str = "AC",
) -> Tuple[DatasetBundle, CleaningManifest]:
    """Mark the listed keypoints unlabeled; drop poses emptied by that.

    Raises if a removal targets a missing pose, an unlabeled keypoint, or
    appears twice (double-clean guard). The input bundle is not touched.
    """
    seen = set()
    for r in removals:
        key = (r.pose_id, r.joint_index)
        if key in seen:
            raise ValueError(f"duplicate removal of pose {r.pose_id} joint {r.joint_index}")
        seen.add(key)

    by_pose: Dict[str, List[RemovalRecord]] = {}
    for r in removals:
        by_pose.setdefault(r.pose_id, []).append(r)

    known_poses = {a.pose_id for a in bundle.annotations}
    for pose_id in by_pose:
        if pose_id not in known_poses:
            raise ValueError(f"removal references unknown pose {pose_id!r}")

    annotated_total = bundle.labeled_keypoint_count()
    new_annotations = []
    for ann in bundle.annotations:
        targets = by_pose.get(ann.pose_id)
        if not targets:
            new_annotations.append(ann)
            continue
        kps = list(ann.keypoints)
        for r in targets:
            if not 0 <= r.joint_index < len(kps):
                raise ValueError(f"removal joint index {r.joint_index} out of range for pose {r.pose_id}")
            if not kps[r.joint_index].labeled:
                raise ValueError(
                    f"pose {r.pose_id} joint {r.joint_index} is already unlabeled (double clean?)"
                )
            kps[r.joint_index] = unlabeled_keypoint()
        cleaned = ann.with_keypoints(kps)
        if cleaned.is_empty:
            continue  # zero labels left: drop the pose
        new_annotations.append(cleaned)

    manifest = CleaningManifest(
        source_digest=bundle.source_digest,
        variant=variant if removals else "RAW",
        removed=tuple(removals),
        annotated_total=annotated_total,
    )
    return bundle.with_annotations(new_annotations), manifest


def hc_from_verdicts(bundle: DatasetBundle, verdicts: Sequence[ReviewVerdict]) -> List[RemovalRecord]:
    """Removals implied by human review: majority vote per keypoint.

    Only keypoint-level verdicts vote. A keypoint is removed when strictly
    more annotators marked a removal class than not; ties keep it. Votes
    against currently-unlabeled keypoints are ignored.
    """
    latest: Dict[Tuple[str, int, str], ReviewVerdict] = {}
    for v in verdicts:
        if v.joint_index is None:
            continue
        key = (v.pose_id, v.joint_index, v.annotator_id)
        prev = latest.get(key)
        if prev is None or (v.timestamp, v.verdict_id) >= (prev.timestamp, prev.verdict_id):
            latest[key] = v

    votes: Dict[Tuple[str, int], Counter] = {}
    for (pose_id, joint_index, _), v in latest.items():
        remove = bool(v.error_classes & REMOVAL_CLASSES)
        votes.setdefault((pose_id, joint_index), Counter())[remove] += 1

    known = {a.pose_id: a for a in bundle.annotations}
    removals = []
    for (pose_id, joint_index), tally in sorted(votes.items()):
        if tally[True] <= tally[False]:
            continue
        ann = known.get(pose_id)
        if ann is None or not 0 <= joint_index < len(ann.keypoints):
            continue
        if not ann.keypoints[joint_index].labeled:
            continue
        removals.append(RemovalRecord(pose_id, joint_index, "human_verdict"))
    return removals


def removals_from_flags(flagged: Iterable) -> List[RemovalRecord]:
    """Removals for detector-flagged keypoints (OutlierVerdict sequence)."""
    return [RemovalRecord(v.pose_id, v.joint_index, "flagged") for v in flagged]


ReportMap = Mapping[str, MetricReport]


@dataclass(frozen=True)
class ReportDiff:
    deltas: Dict[str, Dict[str, float]]  # model -> metric -> cleaned - raw
    per_joint_deltas: Dict[str, Dict[str, Dict[str, float]]]
    leaderboard_metric: str
    leaderboard_before: Tuple[str, ...]
    leaderboard_after: Tuple[str, ...]

    @property
    def order_changed(self) -> bool:
        return self.leaderboard_before != self.leaderboard_after

    def to_dict(self) -> dict:
        return {
            "deltas": {m: dict(v) for m, v in self.deltas.items()},
            "per_joint_deltas": {
                m: {k: dict(v) for k, v in d.items()} for m, d in self.per_joint_deltas.items()
            },
            "leaderboard_metric": self.leaderboard_metric,
            "leaderboard_before": list(self.leaderboard_before),
            "leaderboard_after": list(self.leaderboard_after),
            "order_changed": self.order_changed,
        }

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def _as_report_map(reports: Union[MetricReport, ReportMap]) -> ReportMap:
    if isinstance(reports, MetricReport):
        return {"model": reports}
    return reports


def diff_reports(
    raw: Union[MetricReport, ReportMap],
    cleaned: Union[MetricReport, ReportMap],
) -> ReportDiff:
    """Signed metric deltas plus leaderboard order change detection."""
    raw_map = _as_report_map(raw)
    cleaned_map = _as_report_map(cleaned)
    if set(raw_map) != set(cleaned_map):
        raise ValueError(f"model sets differ: {sorted(raw_map)} vs {sorted(cleaned_map)}")
    deltas: Dict[str, Dict[str, float]] = {}
    per_joint: Dict[str, Dict[str, Dict[str, float]]] = {}
    for model, before in raw_map.items():
        after = cleaned_map[model]
        if before.schema() != after.schema():
            raise ValueError(f"metric schema mismatch for {model!r}")
        deltas[model] = {m: after.metrics[m] - before.metrics[m] for m in before.metrics}
        per_joint[model] = {
            metric: {
                joint: after.per_joint[metric][joint] - before.per_joint[metric][joint]
                for joint in joints
            }
            for metric, joints in before.per_joint.items()
        }
    primary = next(iter(next(iter(raw_map.values())).metrics))
    board_before = tuple(
        sorted(raw_map, key=lambda m: (-raw_map[m].metrics[primary], m))
    )
    board_after = tuple(
        sorted(cleaned_map, key=lambda m: (-cleaned_map[m].metrics[primary], m))
    )
    return ReportDiff(
        deltas=deltas,
        per_joint_deltas=per_joint,
        leaderboard_metric=primary,
        leaderboard_before=board_before,
        leaderboard_after=board_after,
    )


def across_model_variance(values: Sequence[float]) -> float:
    """Population variance of a leaderboard column."""
    if not values:
        raise ValueError("no values")
    return float(np.var(np.asarray(values, dtype=np.float64)))
