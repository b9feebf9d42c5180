"""Statistical experiments: random-removal significance, detector
diagnostics, finite-population sample sizes, error frequencies, annotation
jitter, and heatmap compression ratios.
"""
from __future__ import annotations

import json
import math
import warnings
import zlib
from dataclasses import dataclass
from statistics import NormalDist
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .ingest import DatasetBundle
from .metrics import coco_eval, pckh
from .review.store import ReviewVerdict
from .skeleton import COCO17, Keypoint, PredictionSet, outside_bbox_rate

DEFAULT_REPS = 1000


def outside_rates_payload(bundle: DatasetBundle) -> dict:
    """Outside-bbox keypoint rates, overall and per joint name."""
    overall, per_joint = outside_bbox_rate(bundle.usable, bundle.convention.joint_count)
    return {
        "overall": overall,
        "per_joint": {
            name: (None if math.isnan(per_joint[j]) else float(per_joint[j]))
            for j, name in enumerate(bundle.convention.joint_names)
        },
    }


def evaluate_metric(
    bundle: DatasetBundle,
    predictions: PredictionSet,
    metric: str,
    exclude: Optional[Set[Tuple[str, int]]] = None,
) -> float:
    """Evaluate one named metric; dispatches on the bundle convention."""
    if metric.startswith("PCKh@"):
        alpha = float(metric.split("@", 1)[1])
        report = pckh(bundle, predictions, alphas=(alpha,), exclude=exclude)
        return report.metrics[f"PCKh@{alpha:g}"]
    if bundle.convention is COCO17:
        report = coco_eval(bundle, predictions, exclude=exclude)
        if metric not in report.metrics:
            raise ValueError(f"unknown metric {metric!r}; have {sorted(report.metrics)}")
        return report.metrics[metric]
    raise ValueError(f"metric {metric!r} not available for {bundle.convention.name}")


@dataclass(frozen=True)
class RemovalDistribution:
    metric: str
    k: int
    repetitions: int
    seed: int
    samples: np.ndarray
    removals: Optional[Tuple[Tuple[Tuple[str, int], ...], ...]] = None

    def __post_init__(self) -> None:
        self.samples.setflags(write=False)
        if len(self.samples) != self.repetitions:
            raise ValueError("sample count != repetitions")

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples))

    @property
    def std(self) -> float:
        return float(np.std(self.samples))

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "k": self.k,
            "repetitions": self.repetitions,
            "seed": self.seed,
            "mean": self.mean,
            "std": self.std,
            "samples": self.samples.tolist(),
        }

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def to_csv(self) -> str:
        lines = ["repetition,value"]
        lines += [f"{i},{v:.12g}" for i, v in enumerate(self.samples)]
        return "\n".join(lines) + "\n"


def labeled_keypoint_population(bundle: DatasetBundle) -> List[Tuple[str, int]]:
    """Deterministic enumeration of all labeled keypoints of usable poses."""
    return [(ann.pose_id, j) for ann in bundle.usable for j in ann.labeled_joints]


def removal_distribution(
    bundle: DatasetBundle,
    predictions: PredictionSet,
    metric: str,
    k: int,
    reps: int = DEFAULT_REPS,
    seed: int = 0,
    keep_removals: bool = False,
) -> RemovalDistribution:
    """Metric distribution under k uniformly removed keypoints per repetition.

    Repetition i draws with its own generator seeded (seed, i), so the
    result is reproducible and independent of evaluation order.
    """
    population = labeled_keypoint_population(bundle)
    if k > len(population):
        raise ValueError(f"cannot remove {k} of {len(population)} labeled keypoints")
    if k < 0 or reps < 1:
        raise ValueError("k must be >= 0 and reps >= 1")
    samples = np.empty(reps, dtype=np.float64)
    kept: List[Tuple[Tuple[str, int], ...]] = []
    for i in range(reps):
        rng = np.random.default_rng([seed, i])
        picks = rng.choice(len(population), size=k, replace=False)
        exclude = {population[p] for p in picks}
        samples[i] = evaluate_metric(bundle, predictions, metric, exclude)
        if keep_removals:
            kept.append(tuple(sorted(exclude)))
    return RemovalDistribution(
        metric=metric,
        k=k,
        repetitions=reps,
        seed=seed,
        samples=samples,
        removals=tuple(kept) if keep_removals else None,
    )


def significance(cleaned_score: float, dist: RemovalDistribution) -> float:
    """Distance of a cleaned-set score from the removal distribution, in sigmas."""
    if dist.std == 0.0:
        warnings.warn("removal distribution has zero std; significance is unbounded")
        return math.copysign(math.inf, cleaned_score - dist.mean) if cleaned_score != dist.mean else 0.0
    return (cleaned_score - dist.mean) / dist.std


@dataclass(frozen=True)
class DetectorDiagnostics:
    per_annotator: Dict[str, Tuple[float, float]]  # id -> (precision, recall)

    @property
    def precision(self) -> float:
        return float(np.mean([p for p, _ in self.per_annotator.values()]))

    @property
    def recall(self) -> float:
        return float(np.mean([r for _, r in self.per_annotator.values()]))

    def to_dict(self) -> dict:
        return {
            "per_annotator": {
                a: {"precision": p, "recall": r} for a, (p, r) in self.per_annotator.items()
            },
            "average_precision": self.precision,
            "average_recall": self.recall,
        }


def detector_diagnostics(
    flagged: Iterable[Tuple[str, Optional[int]]],
    verdicts: Sequence[ReviewVerdict],
) -> DetectorDiagnostics:
    """Precision/recall of the detector against human faulty/not-faulty labels.

    ``flagged`` holds detector-flagged (pose_id, joint_index) keys; a None
    joint marks a pose-level flag. Each annotator's latest verdict per key
    is their judgment; precision is measured over judged flagged keys and
    recall over the annotator's faulty set.
    """
    flagged_keys = set(flagged)
    if not verdicts:
        raise ValueError("no labeled sample to diagnose against")
    latest: Dict[Tuple[str, Optional[int], str], ReviewVerdict] = {}
    for v in verdicts:
        key = (v.pose_id, v.joint_index, v.annotator_id)
        prev = latest.get(key)
        if prev is None or (v.timestamp, v.verdict_id) >= (prev.timestamp, prev.verdict_id):
            latest[key] = v

    per_annotator: Dict[str, Tuple[float, float]] = {}
    annotators = sorted({v.annotator_id for v in latest.values()})
    for annotator in annotators:
        judged = {
            (pose_id, joint): v
            for (pose_id, joint, a), v in latest.items()
            if a == annotator
        }
        faulty = {key for key, v in judged.items() if v.faulty}
        judged_flagged = flagged_keys & set(judged)
        if not judged_flagged:
            raise ValueError(f"annotator {annotator!r} judged no flagged keypoints")
        tp = len(judged_flagged & faulty)
        precision = tp / len(judged_flagged)
        recall = tp / len(faulty) if faulty else float("nan")
        per_annotator[annotator] = (precision, recall)
    return DetectorDiagnostics(per_annotator=per_annotator)


def sample_size(population: int, confidence: float = 0.99, margin: float = 0.10) -> int:
    """Finite-population sample size at worst-case proportion 0.5.

    Uses the two-decimal z convention (99% -> 2.58) and ceiling rounding,
    n = ceil(n0 / (1 + (n0 - 1) / N)) with n0 = z^2 * 0.25 / margin^2.
    """
    if population < 1:
        raise ValueError("population must be >= 1")
    if not 0.0 < margin < 1.0:
        raise ValueError(f"margin must be in (0, 1), got {margin}")
    if not 0.0 < confidence < 1.0:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    z = round(NormalDist().inv_cdf((1.0 + confidence) / 2.0), 2)
    n0 = z * z * 0.25 / (margin * margin)
    return math.ceil(n0 / (1.0 + (n0 - 1.0) / population))


@dataclass(frozen=True)
class ErrorFrequencyTable:
    class_counts: Dict[str, int]
    class_fractions: Dict[str, float]
    per_joint: Dict[int, Dict[str, int]]  # positional classes only
    total_verdicts: int

    def to_dict(self) -> dict:
        return {
            "total_verdicts": self.total_verdicts,
            "class_counts": dict(self.class_counts),
            "class_fractions": dict(self.class_fractions),
            "per_joint": {str(j): dict(c) for j, c in sorted(self.per_joint.items())},
        }

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


POSITIONAL_CLASSES = ("false_label", "left_right_swap", "incorrect_position")


def error_frequency(verdicts: Sequence[ReviewVerdict]) -> ErrorFrequencyTable:
    """Per-class counts and fractions; per-joint table for positional classes."""
    from .skeleton import ErrorClass

    class_counts = {c.value: 0 for c in ErrorClass}
    per_joint: Dict[int, Dict[str, int]] = {}
    for v in verdicts:
        for c in v.error_classes:
            class_counts[c.value] += 1
            if c.value in POSITIONAL_CLASSES and v.joint_index is not None:
                per_joint.setdefault(v.joint_index, {k: 0 for k in POSITIONAL_CLASSES})
                per_joint[v.joint_index][c.value] += 1
    total = len(verdicts)
    fractions = {k: (n / total if total else 0.0) for k, n in class_counts.items()}
    return ErrorFrequencyTable(
        class_counts=class_counts,
        class_fractions=fractions,
        per_joint=per_joint,
        total_verdicts=total,
    )


def inject_jitter(
    bundle: DatasetBundle, sigma_pct: float, seed: Union[int, Sequence[int]] = 0
) -> DatasetBundle:
    """Gaussian-perturb labeled coordinates by sigma_pct of the bbox diagonal.

    sigma_pct = 0 returns the bundle unchanged, bit for bit. Visibility
    flags, boxes and pose count are never touched.
    """
    if sigma_pct < 0:
        raise ValueError("sigma_pct must be >= 0")
    if sigma_pct == 0.0:
        return bundle
    rng = np.random.default_rng(seed)
    new_annotations = []
    for ann in bundle.annotations:
        sd = sigma_pct * math.hypot(ann.bbox[2], ann.bbox[3])
        kps = []
        for kp in ann.keypoints:
            if kp.labeled:
                kps.append(
                    Keypoint(
                        kp.x + rng.normal(0.0, sd),
                        kp.y + rng.normal(0.0, sd),
                        kp.visibility,
                    )
                )
            else:
                kps.append(kp)
        new_annotations.append(ann.with_keypoints(kps))
    return bundle.with_annotations(new_annotations)


@dataclass(frozen=True)
class Heatmap:
    grid: np.ndarray  # (H, W) intensities in [0, 1]
    joint_index: Optional[int] = None
    peak: Optional[Tuple[int, int]] = None  # (row, col)
    in_bounds: bool = True

    def __post_init__(self) -> None:
        self.grid.setflags(write=False)


def render_heatmap(
    x: float,
    y: float,
    grid: Tuple[int, int] = (64, 48),
    sigma_px: float = 2.0,
    joint_index: Optional[int] = None,
) -> Heatmap:
    """Gaussian bump with peak exactly 1.0 at the nearest grid cell.

    Coordinates are grid pixels, (0, 0) top-left, x along width. A point
    outside the grid yields an all-zero map flagged out of bounds.
    """
    h, w = grid
    if sigma_px <= 0:
        raise ValueError("sigma_px must be positive")
    if not (0 <= x < w and 0 <= y < h):
        return Heatmap(np.zeros((h, w)), joint_index=joint_index, peak=None, in_bounds=False)
    cx = int(round(x))
    cy = int(round(y))
    cx = min(cx, w - 1)
    cy = min(cy, h - 1)
    cols = np.arange(w, dtype=np.float64)
    rows = np.arange(h, dtype=np.float64)
    gx = np.exp(-((cols - cx) ** 2) / (2.0 * sigma_px ** 2))
    gy = np.exp(-((rows - cy) ** 2) / (2.0 * sigma_px ** 2))
    return Heatmap(np.outer(gy, gx), joint_index=joint_index, peak=(cy, cx), in_bounds=True)


def compression_ratio(heatmaps: Sequence[Heatmap], level: int = 6) -> float:
    """DEFLATE compressed/raw size of the 8-bit quantized heatmap stack."""
    if not heatmaps:
        raise ValueError("need at least one heatmap")
    chunks = []
    for hm in heatmaps:
        q = np.round(np.clip(hm.grid, 0.0, 1.0) * 255.0).astype(np.uint8)
        chunks.append(q.tobytes())
    raw = b"".join(chunks)
    return len(zlib.compress(raw, level)) / len(raw)


def jitter_averaged_heatmaps(
    bundle: DatasetBundle,
    sigma_pct: float,
    seed: int = 0,
    replicas: int = 16,
    grid: Tuple[int, int] = (64, 48),
    sigma_px: float = 2.0,
) -> List[Heatmap]:
    """Average rendered heatmaps over jittered annotation replicas.

    Keypoints are mapped into the grid through their pose bbox, mirroring
    the crop used by heatmap-based pose models.
    """
    h, w = grid
    acc: Dict[Tuple[str, int], np.ndarray] = {}
    hits: Dict[Tuple[str, int], int] = {}
    for rep in range(replicas):
        jittered = inject_jitter(bundle, sigma_pct, seed=[seed, rep])
        for ann in jittered.usable:
            bx, by, bw, bh = ann.bbox
            for j in ann.labeled_joints:
                kp = ann.keypoints[j]
                gx = (kp.x - bx) / bw * (w - 1)
                gy = (kp.y - by) / bh * (h - 1)
                hm = render_heatmap(gx, gy, grid=grid, sigma_px=sigma_px, joint_index=j)
                key = (ann.pose_id, j)
                if key not in acc:
                    acc[key] = np.zeros((h, w))
                    hits[key] = 0
                acc[key] += hm.grid
                hits[key] += 1
    out = []
    for key in sorted(acc):
        out.append(Heatmap(acc[key] / hits[key], joint_index=key[1]))
    return out


def jitter_compression_curve(
    bundle: DatasetBundle,
    sigmas: Sequence[float],
    seed: int = 0,
    replicas: int = 16,
    grid: Tuple[int, int] = (64, 48),
    sigma_px: float = 2.0,
) -> Dict[float, float]:
    """Compression ratio of jitter-averaged heatmaps per jitter level."""
    curve = {}
    for sigma in sigmas:
        maps = jitter_averaged_heatmaps(
            bundle, sigma, seed=seed, replicas=replicas, grid=grid, sigma_px=sigma_px
        )
        curve[float(sigma)] = compression_ratio(maps)
    return curve
