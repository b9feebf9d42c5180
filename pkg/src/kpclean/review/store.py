"""Review tasks, human verdicts, and their durable append-only store.

Verdicts land in a JSONL log that is flushed and fsynced before the write
is acknowledged, so a crash after an acknowledgment never loses data. A
periodic snapshot compacts reads; recovery loads the snapshot and replays
the log tail. Resubmitting a verdict_id is idempotent.
"""
from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Union

import numpy as np

from ..ingest import DatasetBundle
from ..skeleton import Difficulty, ErrorClass, FAULTY_CLASSES

MAX_ANNOTATORS_PER_TASK = 3
SNAPSHOT_EVERY = 100

TASK_SOURCES = ("flagged", "random_sample", "control")


@dataclass(frozen=True)
class ReviewVerdict:
    verdict_id: str
    annotator_id: str
    pose_id: str
    joint_index: Optional[int]
    error_classes: frozenset[ErrorClass]
    difficulty: Optional[Difficulty]
    faulty: bool
    timestamp: float
    free_text: str = ""
    source: str = "flagged"

    def __post_init__(self) -> None:
        expected = bool(self.error_classes & FAULTY_CLASSES)
        if self.faulty != expected:
            raise ValueError(
                f"verdict {self.verdict_id}: faulty={self.faulty} inconsistent with "
                f"error classes {sorted(c.value for c in self.error_classes)}"
            )

    @classmethod
    def create(
        cls,
        verdict_id: str,
        annotator_id: str,
        pose_id: str,
        joint_index: Optional[int] = None,
        error_classes: Iterable[ErrorClass] = (),
        difficulty: Optional[Difficulty] = None,
        free_text: str = "",
        source: str = "flagged",
        timestamp: Optional[float] = None,
    ) -> "ReviewVerdict":
        classes = frozenset(error_classes)
        return cls(
            verdict_id=verdict_id,
            annotator_id=annotator_id,
            pose_id=pose_id,
            joint_index=joint_index,
            error_classes=classes,
            difficulty=difficulty,
            faulty=bool(classes & FAULTY_CLASSES),
            timestamp=time.time() if timestamp is None else timestamp,
            free_text=free_text,
            source=source,
        )

    def to_dict(self) -> dict:
        return {
            "verdict_id": self.verdict_id,
            "annotator_id": self.annotator_id,
            "pose_id": self.pose_id,
            "joint_index": self.joint_index,
            "error_classes": sorted(c.value for c in self.error_classes),
            "difficulty": self.difficulty.value if self.difficulty else None,
            "faulty": self.faulty,
            "timestamp": self.timestamp,
            "free_text": self.free_text,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ReviewVerdict":
        return cls(
            verdict_id=str(doc["verdict_id"]),
            annotator_id=str(doc["annotator_id"]),
            pose_id=str(doc["pose_id"]),
            joint_index=None if doc.get("joint_index") is None else int(doc["joint_index"]),
            error_classes=frozenset(ErrorClass(c) for c in doc.get("error_classes", [])),
            difficulty=Difficulty(doc["difficulty"]) if doc.get("difficulty") else None,
            faulty=bool(doc["faulty"]),
            timestamp=float(doc.get("timestamp", 0.0)),
            free_text=doc.get("free_text", ""),
            source=doc.get("source", "flagged"),
        )


@dataclass(frozen=True)
class ReviewTask:
    task_id: str
    pose_id: str
    image_id: str
    source: str
    overlay: dict  # keypoints, flagged joints, box geometry, convention

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "pose_id": self.pose_id,
            "image_id": self.image_id,
            "source": self.source,
            "overlay": self.overlay,
        }


def build_overlay(bundle: DatasetBundle, pose_id: str, flagged_joints: Sequence[int]) -> dict:
    ann = bundle.get(pose_id)
    overlay = {
        "convention": bundle.convention.name,
        "joint_names": list(bundle.convention.joint_names),
        "flip_pairs": [list(p) for p in bundle.convention.flip_pairs],
        "keypoints": [[kp.x, kp.y, int(kp.visibility)] for kp in ann.keypoints],
        "flagged_joints": sorted(int(j) for j in flagged_joints),
        "bbox": list(ann.bbox),
    }
    if ann.center is not None:
        overlay["center"] = list(ann.center)
    if ann.scale is not None:
        overlay["scale"] = ann.scale
    return overlay


def enqueue_tasks(
    bundle: DatasetBundle,
    source: str,
    flagged: Optional[Dict[str, Sequence[int]]] = None,
    n: Optional[int] = None,
    seed: int = 0,
) -> List[ReviewTask]:
    """Build the review queue: all flagged poses, or a seeded random sample."""
    if source == "flagged":
        flagged = flagged or {}
        pose_ids = [a.pose_id for a in bundle.annotations if a.pose_id in flagged]
        return [
            ReviewTask(
                task_id=f"task_{i:06d}",
                pose_id=pose_id,
                image_id=bundle.get(pose_id).image_id,
                source="flagged",
                overlay=build_overlay(bundle, pose_id, flagged[pose_id]),
            )
            for i, pose_id in enumerate(pose_ids)
        ]
    if source in ("random_sample", "control"):
        if n is None or n < 0:
            raise ValueError("random sampling needs n >= 0")
        pose_ids = [a.pose_id for a in bundle.usable]
        if n > len(pose_ids):
            raise ValueError(f"cannot sample {n} of {len(pose_ids)} poses")
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(pose_ids), size=n, replace=False)
        return [
            ReviewTask(
                task_id=f"task_{i:06d}",
                pose_id=pose_ids[p],
                image_id=bundle.get(pose_ids[p]).image_id,
                source=source,
                overlay=build_overlay(bundle, pose_ids[p], []),
            )
            for i, p in enumerate(picks)
        ]
    raise ValueError(f"unknown task source {source!r}")


class VerdictStore:
    """Durable verdict log: append-only JSONL plus periodic snapshot."""

    def __init__(self, directory: Union[str, Path], snapshot_every: int = SNAPSHOT_EVERY):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.log_path = self.directory / "verdicts.jsonl"
        self.snapshot_path = self.directory / "snapshot.json"
        self.snapshot_every = snapshot_every
        self._lock = threading.Lock()
        self._verdicts: Dict[str, ReviewVerdict] = {}
        self._order: List[str] = []
        self._since_snapshot = 0
        self._recover()
        self._log_fh = open(self.log_path, "a", encoding="utf-8")

    def _recover(self) -> None:
        offset = 0
        if self.snapshot_path.exists():
            snap = json.loads(self.snapshot_path.read_text())
            offset = int(snap.get("log_offset", 0))
            for doc in snap.get("verdicts", []):
                v = ReviewVerdict.from_dict(doc)
                if v.verdict_id not in self._verdicts:
                    self._verdicts[v.verdict_id] = v
                    self._order.append(v.verdict_id)
        if self.log_path.exists():
            with open(self.log_path, "rb") as fh:
                fh.seek(offset)
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        v = ReviewVerdict.from_dict(json.loads(line))
                    except (json.JSONDecodeError, KeyError, ValueError):
                        continue  # torn tail write; everything before it was acked
                    if v.verdict_id not in self._verdicts:
                        self._verdicts[v.verdict_id] = v
                        self._order.append(v.verdict_id)

    def submit(self, verdict: ReviewVerdict) -> bool:
        """Persist a verdict; returns False if the id was already stored."""
        with self._lock:
            if verdict.verdict_id in self._verdicts:
                return False
            line = json.dumps(verdict.to_dict())
            self._log_fh.write(line + "\n")
            self._log_fh.flush()
            os.fsync(self._log_fh.fileno())
            self._verdicts[verdict.verdict_id] = verdict
            self._order.append(verdict.verdict_id)
            self._since_snapshot += 1
            if self._since_snapshot >= self.snapshot_every:
                self._write_snapshot_locked()
            return True

    def _write_snapshot_locked(self) -> None:
        self._log_fh.flush()
        os.fsync(self._log_fh.fileno())
        snap = {
            "log_offset": self.log_path.stat().st_size,
            "verdicts": [self._verdicts[vid].to_dict() for vid in self._order],
        }
        tmp = self.snapshot_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(snap))
        os.replace(tmp, self.snapshot_path)
        self._since_snapshot = 0

    def export(
        self,
        source: Optional[str] = None,
        annotator_id: Optional[str] = None,
    ) -> List[ReviewVerdict]:
        """Stable-order export, optionally filtered."""
        with self._lock:
            out = [self._verdicts[vid] for vid in self._order]
        if source is not None:
            out = [v for v in out if v.source == source]
        if annotator_id is not None:
            out = [v for v in out if v.annotator_id == annotator_id]
        return out

    def __len__(self) -> int:
        with self._lock:
            return len(self._order)

    def close(self) -> None:
        with self._lock:
            self._log_fh.flush()
            os.fsync(self._log_fh.fileno())
            self._log_fh.close()


class ReviewQueue:
    """Serves tasks to annotators: least-reviewed first, 3 judges per task."""

    def __init__(self, tasks: Sequence[ReviewTask], max_annotators: int = MAX_ANNOTATORS_PER_TASK):
        self.tasks = {t.task_id: t for t in tasks}
        self._task_order = [t.task_id for t in tasks]
        self.max_annotators = max_annotators
        self._judged: Dict[str, Set[str]] = {t.task_id: set() for t in tasks}
        self._open: Dict[str, Set[str]] = {t.task_id: set() for t in tasks}  # served, not judged
        self._lock = threading.Lock()

    def task_for_pose(self, pose_id: str) -> Optional[ReviewTask]:
        for tid in self._task_order:
            if self.tasks[tid].pose_id == pose_id:
                return self.tasks[tid]
        return None

    def next_task(self, annotator_id: str) -> Optional[ReviewTask]:
        if not annotator_id:
            raise ValueError("annotator_id must be non-empty")
        with self._lock:
            best: Optional[str] = None
            best_load = None
            for tid in self._task_order:
                engaged = self._judged[tid] | self._open[tid]
                if annotator_id in engaged:
                    continue
                if len(engaged) >= self.max_annotators:
                    continue
                load = len(self._judged[tid])
                if best_load is None or load < best_load:
                    best, best_load = tid, load
            if best is None:
                return None
            self._open[best].add(annotator_id)
            return self.tasks[best]

    def mark_judged(self, task_id: str, annotator_id: str) -> None:
        with self._lock:
            if task_id not in self.tasks:
                raise KeyError(f"unknown task {task_id!r}")
            self._open[task_id].discard(annotator_id)
            self._judged[task_id].add(annotator_id)

    def was_served(self, pose_id: str, annotator_id: str) -> bool:
        with self._lock:
            for tid, task in self.tasks.items():
                if task.pose_id == pose_id and (
                    annotator_id in self._open[tid] or annotator_id in self._judged[tid]
                ):
                    return True
        return False
