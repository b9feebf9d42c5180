"""Metric report container shared by the COCO and MPII evaluators."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional


@dataclass(frozen=True)
class MetricReport:
    """Evaluation result in percent, with optional per-joint breakdown.

    ``metrics`` maps metric name (e.g. ``AP``, ``PCKh@0.5``) to a value in
    [0, 100]; -1 marks an undefined slot (no ground truth in range).
    ``per_joint`` maps metric name to {joint or group name: value}.
    """

    convention: str
    metrics: Dict[str, float]
    per_joint: Dict[str, Dict[str, float]] = field(default_factory=dict)
    pose_count: int = 0
    keypoint_count: int = 0
    label: str = "RAW"

    def value(self, name: str) -> float:
        return self.metrics[name]

    def schema(self) -> tuple:
        return (
            self.convention,
            tuple(self.metrics),
            tuple((m, tuple(sorted(j))) for m, j in self.per_joint.items()),
        )

    def to_dict(self) -> dict:
        return {
            "convention": self.convention,
            "label": self.label,
            "metrics": dict(self.metrics),
            "per_joint": {m: dict(v) for m, v in self.per_joint.items()},
            "pose_count": self.pose_count,
            "keypoint_count": self.keypoint_count,
        }

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MetricReport":
        return cls(
            convention=doc["convention"],
            metrics=dict(doc["metrics"]),
            per_joint={m: dict(v) for m, v in doc.get("per_joint", {}).items()},
            pose_count=int(doc.get("pose_count", 0)),
            keypoint_count=int(doc.get("keypoint_count", 0)),
            label=doc.get("label", "RAW"),
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls.from_dict(json.loads(text))

    def to_text(self) -> str:
        """Aligned-column rendering in the style of the benchmark tables."""
        lines = [f"# {self.convention} [{self.label}]  poses={self.pose_count} keypoints={self.keypoint_count}"]
        width = max((len(n) for n in self.metrics), default=6)
        for name, value in self.metrics.items():
            lines.append(f"{name:<{width}}  {value:7.3f}")
        for metric, joints in self.per_joint.items():
            lines.append(f"-- {metric} per joint --")
            jwidth = max(len(j) for j in joints)
            for joint, value in joints.items():
                lines.append(f"{joint:<{jwidth}}  {value:7.3f}")
        return "\n".join(lines)
