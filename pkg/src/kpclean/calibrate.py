"""Flagging-threshold calibration from the score histogram structure.

Keypoints without annotations form their own high-score mode; the default
strategy places the threshold at the center of that mode's bin, so that an
annotation is flagged iff it looks at least as anomalous as a typical
unannotated keypoint. A ``valley`` strategy (minimum bin between the two
modes) is available for sensitivity studies.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .detect import OutlierVerdict

POPULATIONS = ("all", "annotated", "non_annotated")
STRATEGIES = ("mode", "valley")
MIN_NON_ANNOTATED = 50
MIN_MODE_SEPARATION_BINS = 3


class CalibrationAmbiguousError(ValueError):
    """Score modes overlap; a threshold must be chosen manually."""


@dataclass(frozen=True)
class ScoreHistogram:
    bin_width: float
    counts: np.ndarray
    population: str

    def __post_init__(self) -> None:
        self.counts.setflags(write=False)

    @property
    def size(self) -> int:
        return int(self.counts.sum())

    @property
    def n_bins(self) -> int:
        return len(self.counts)

    def bin_center(self, index: int) -> float:
        return (index + 0.5) * self.bin_width

    def mode_bin(self) -> int:
        """Index of the maximal-count bin; ties resolve to the lower bin."""
        return int(np.argmax(self.counts))

    def to_dict(self) -> dict:
        return {
            "bin_width": self.bin_width,
            "population": self.population,
            "counts": self.counts.tolist(),
        }


def _n_bins(bin_width: float) -> int:
    if not 0.0 < bin_width <= 1.0:
        raise ValueError(f"bin_width must be in (0, 1], got {bin_width}")
    n = round(1.0 / bin_width)
    if abs(n * bin_width - 1.0) > 1e-9:
        raise ValueError(f"bin_width {bin_width} does not divide 1 exactly")
    return n


def histogram(
    verdicts: Sequence[OutlierVerdict],
    population: str = "all",
    bin_width: float = 0.01,
) -> ScoreHistogram:
    """Left-inclusive histogram of scores over [0, 1] for one population."""
    if population not in POPULATIONS:
        raise ValueError(f"population must be one of {POPULATIONS}")
    n = _n_bins(bin_width)
    if population == "annotated":
        scores = [v.score for v in verdicts if v.annotated]
    elif population == "non_annotated":
        scores = [v.score for v in verdicts if not v.annotated]
    else:
        scores = [v.score for v in verdicts]
    if not scores:
        raise ValueError(f"no verdicts in population {population!r}")
    counts = np.zeros(n, dtype=np.int64)
    for s in scores:
        counts[min(int(s / bin_width), n - 1)] += 1
    return ScoreHistogram(bin_width=bin_width, counts=counts, population=population)


@dataclass(frozen=True)
class CalibrationResult:
    threshold: float
    strategy: str
    bin_width: float
    annotated_hist: ScoreHistogram
    non_annotated_hist: ScoreHistogram
    annotated_mode_bin: int
    non_annotated_mode_bin: int
    separation_bins: int
    annotated_mode_count: int
    non_annotated_mode_count: int

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "strategy": self.strategy,
            "bin_width": self.bin_width,
            "annotated_mode_bin": self.annotated_mode_bin,
            "non_annotated_mode_bin": self.non_annotated_mode_bin,
            "separation_bins": self.separation_bins,
            "annotated_mode_count": self.annotated_mode_count,
            "non_annotated_mode_count": self.non_annotated_mode_count,
            "histograms": {
                "annotated": self.annotated_hist.to_dict(),
                "non_annotated": self.non_annotated_hist.to_dict(),
            },
        }

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def calibrate_threshold(
    verdicts: Sequence[OutlierVerdict],
    bin_width: float = 0.01,
    strategy: str = "mode",
    min_non_annotated: int = MIN_NON_ANNOTATED,
) -> CalibrationResult:
    """Derive the flagging threshold from the two score populations.

    Raises :class:`CalibrationAmbiguousError` when the annotated and
    non-annotated modes sit closer than three bins; calibration off a
    merged histogram would be noise.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}")
    ann_hist = histogram(verdicts, "annotated", bin_width)
    na_hist = histogram(verdicts, "non_annotated", bin_width)
    if na_hist.size < min_non_annotated:
        raise ValueError(
            f"only {na_hist.size} non-annotated keypoints; need >= {min_non_annotated} to calibrate"
        )
    ann_mode = ann_hist.mode_bin()
    na_mode = na_hist.mode_bin()
    separation = na_mode - ann_mode
    if abs(separation) < MIN_MODE_SEPARATION_BINS:
        raise CalibrationAmbiguousError(
            f"annotated and non-annotated score modes are {abs(separation)} bins apart "
            f"(< {MIN_MODE_SEPARATION_BINS}); pass an explicit threshold instead"
        )
    if strategy == "mode":
        threshold = na_hist.bin_center(na_mode)
    else:
        lo, hi = sorted((ann_mode, na_mode))
        interior = ann_hist.counts[lo + 1 : hi] + na_hist.counts[lo + 1 : hi]
        threshold = ann_hist.bin_center(lo + 1 + int(np.argmin(interior)))
    return CalibrationResult(
        threshold=threshold,
        strategy=strategy,
        bin_width=bin_width,
        annotated_hist=ann_hist,
        non_annotated_hist=na_hist,
        annotated_mode_bin=ann_mode,
        non_annotated_mode_bin=na_mode,
        separation_bins=separation,
        annotated_mode_count=int(ann_hist.counts[ann_mode]),
        non_annotated_mode_count=int(na_hist.counts[na_mode]),
    )
