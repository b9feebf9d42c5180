"""Keypoint anomaly scoring: deviation features + isolation forest.

Each keypoint annotation gets a feature vector of its normalized
prediction-annotation distances across the M ensemble models. A model
without a match contributes that model's 99.5th percentile distance
instead: a failed match must not look like an inlier. Vectors are scored
by an isolation forest built from scratch; scores are oriented high =
anomalous and are deterministic for a fixed seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Tuple, Union, runtime_checkable

import numpy as np

from .metrics.distances import JointDistanceRecord

EULER_GAMMA = 0.5772156649


@runtime_checkable
class AnomalyScorer(Protocol):
    """Contract for pluggable detectors (LOF, OC-SVM, ...).

    Implementations fit on deviation vectors and emit scores in (0, 1),
    oriented high = anomalous. :class:`IsolationForestScorer` below is the
    reference implementation; alternatives slot into the same pipeline.
    """

    def fit(self, vectors: Sequence["DeviationVector"], seed: int) -> None: ...

    def scores(self, vectors: Sequence["DeviationVector"]) -> np.ndarray: ...


@dataclass(frozen=True, slots=True)
class DeviationVector:
    pose_id: str
    joint_index: int
    features: np.ndarray  # shape (M,)
    annotated: bool

    def __post_init__(self) -> None:
        self.features.setflags(write=False)


@dataclass(frozen=True, slots=True)
class OutlierVerdict:
    pose_id: str
    joint_index: int
    score: float
    annotated: bool
    flagged: bool = False
    threshold_used: float = math.nan


FEATURE_DIMS = ("scalar", "xy")


def build_features(
    records: Sequence[JointDistanceRecord],
    n_models: int,
    feature_dim: str = "scalar",
) -> List[DeviationVector]:
    """Group distance records per keypoint into deviation vectors.

    ``scalar`` uses one normalized distance per model (length M); ``xy``
    keeps the signed displacement components (length 2M). A model without
    a match contributes the 99.5th percentile of its observed distances,
    so a failed match never masquerades as an inlier.
    """
    if n_models <= 0:
        raise ValueError("n_models must be >= 1")
    if feature_dim not in FEATURE_DIMS:
        raise ValueError(f"feature_dim must be one of {FEATURE_DIMS}")
    model_ids = sorted({r.model_id for r in records})
    if len(model_ids) != n_models:
        raise ValueError(f"records carry {len(model_ids)} model ids, expected {n_models}")
    model_pos = {m: i for i, m in enumerate(model_ids)}
    width = 1 if feature_dim == "scalar" else 2

    fill = {}
    for m in model_ids:
        observed = [r.normalized_distance for r in records if r.model_id == m and not r.missing]
        fill[m] = float(np.percentile(observed, 99.5)) if observed else 0.0

    grouped: Dict[Tuple[str, int], List[JointDistanceRecord]] = {}
    order: List[Tuple[str, int]] = []
    for r in records:
        key = (r.pose_id, r.joint_index)
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        grouped[key].append(r)

    vectors = []
    for key in order:
        recs = grouped[key]
        feats = np.empty(n_models * width, dtype=np.float64)
        for m, pos in model_pos.items():
            feats[pos * width : (pos + 1) * width] = fill[m]
        annotated = recs[0].annotated
        for r in recs:
            if r.missing:
                continue
            pos = model_pos[r.model_id]
            if feature_dim == "scalar":
                feats[pos] = r.normalized_distance
            else:
                feats[2 * pos] = r.normalized_dx
                feats[2 * pos + 1] = r.normalized_dy
        if not np.all(np.isfinite(feats)):
            raise ValueError(f"non-finite features for keypoint {key}")
        vectors.append(DeviationVector(key[0], key[1], feats, annotated))
    return vectors


def average_path_length(n: Union[int, float]) -> float:
    """Expected path length c(n) of an unsuccessful search in a BST of n points."""
    if n <= 1:
        return 0.0
    return 2.0 * (math.log(n - 1.0) + EULER_GAMMA) - 2.0 * (n - 1.0) / n


@dataclass
class _Tree:
    feature: np.ndarray  # (nodes,) int32; -1 at leaves
    threshold: np.ndarray  # (nodes,) float64
    left: np.ndarray  # (nodes,) int32
    right: np.ndarray  # (nodes,) int32
    path: np.ndarray  # (nodes,) float64; at leaves: depth + c(leaf size)


@dataclass(frozen=True)
class IsolationForestModel:
    trees: Tuple[_Tree, ...]
    n_trees: int
    psi: int  # effective subsample size
    seed: int
    n_features: int
    c_psi: float


def _build_tree(X: np.ndarray, rng: np.random.Generator, height_limit: int) -> _Tree:
    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    path: List[float] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        path.append(0.0)
        return len(feature) - 1

    def grow(idx: np.ndarray, depth: int) -> int:
        node = new_node()
        rows = X[idx]
        splittable = np.where(rows.min(axis=0) < rows.max(axis=0))[0]
        if depth >= height_limit or len(idx) <= 1 or len(splittable) == 0:
            path[node] = depth + average_path_length(len(idx))
            return node
        q = int(splittable[rng.integers(len(splittable))])
        col = rows[:, q]
        lo, hi = float(col.min()), float(col.max())
        p = float(rng.uniform(lo, hi))
        if p <= lo:
            p = float(np.nextafter(lo, hi))
        mask = col < p
        feature[node] = q
        threshold[node] = p
        left[node] = grow(idx[mask], depth + 1)
        right[node] = grow(idx[~mask], depth + 1)
        return node

    n = X.shape[0]
    grow(np.arange(n), 0)
    return _Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        path=np.asarray(path, dtype=np.float64),
    )


def _as_matrix(vectors: Union[np.ndarray, Sequence[DeviationVector]]) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        X = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    else:
        X = np.stack([v.features for v in vectors]).astype(np.float64)
    return X


def fit_forest(
    vectors: Union[np.ndarray, Sequence[DeviationVector]],
    t: int = 100,
    psi: int = 256,
    seed: int = 0,
) -> IsolationForestModel:
    """Fit t isolation trees on subsamples of size min(psi, n), without replacement.

    Tree i draws from its own generator seeded with (seed, i), so fitting is
    reproducible and order-independent regardless of parallel scheduling.
    """
    X = _as_matrix(vectors)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least 2 vectors to fit")
    if t < 1:
        raise ValueError("t must be >= 1")
    psi_eff = min(psi, n)
    height_limit = max(1, math.ceil(math.log2(psi_eff)))
    trees = []
    for i in range(t):
        rng = np.random.default_rng([seed, i])
        sample = rng.choice(n, size=psi_eff, replace=False)
        trees.append(_build_tree(X[sample], rng, height_limit))
    return IsolationForestModel(
        trees=tuple(trees),
        n_trees=t,
        psi=psi_eff,
        seed=seed,
        n_features=X.shape[1],
        c_psi=average_path_length(psi_eff),
    )


def _tree_paths(tree: _Tree, X: np.ndarray) -> np.ndarray:
    node = np.zeros(X.shape[0], dtype=np.int32)
    active = tree.feature[node] >= 0
    while np.any(active):
        idx = np.nonzero(active)[0]
        cur = node[idx]
        q = tree.feature[cur]
        go_left = X[idx, q] < tree.threshold[cur]
        node[idx] = np.where(go_left, tree.left[cur], tree.right[cur])
        active = tree.feature[node] >= 0
    return tree.path[node]


def score_matrix(model: IsolationForestModel, vectors: Union[np.ndarray, Sequence[DeviationVector]]) -> np.ndarray:
    """Anomaly scores 2^(-E[h]/c(psi)) in (0, 1); higher = more anomalous."""
    X = _as_matrix(vectors)
    if X.shape[1] != model.n_features:
        raise ValueError(f"feature length {X.shape[1]} != fitted {model.n_features}")
    mean_path = np.zeros(X.shape[0])
    for tree in model.trees:
        mean_path += _tree_paths(tree, X)
    mean_path /= model.n_trees
    return np.power(2.0, -mean_path / model.c_psi)


def score(model: IsolationForestModel, vector: np.ndarray) -> float:
    return float(score_matrix(model, np.asarray(vector, dtype=np.float64).reshape(1, -1))[0])


class IsolationForestScorer:
    """:class:`AnomalyScorer` adapter around the isolation forest."""

    def __init__(self, t: int = 100, psi: int = 256):
        self.t = t
        self.psi = psi
        self.model: Optional[IsolationForestModel] = None

    def fit(self, vectors: Sequence[DeviationVector], seed: int) -> None:
        self.model = fit_forest(vectors, t=self.t, psi=self.psi, seed=seed)

    def scores(self, vectors: Sequence[DeviationVector]) -> np.ndarray:
        if self.model is None:
            raise ValueError("fit before scoring")
        return score_matrix(self.model, vectors)


def score_verdicts(
    model: IsolationForestModel, vectors: Sequence[DeviationVector]
) -> List[OutlierVerdict]:
    scores = score_matrix(model, vectors)
    return [
        OutlierVerdict(v.pose_id, v.joint_index, float(s), v.annotated)
        for v, s in zip(vectors, scores)
    ]


def apply_threshold(verdicts: Iterable[OutlierVerdict], threshold: float) -> List[OutlierVerdict]:
    """Recompute flags: annotated keypoints with score >= threshold."""
    return [
        OutlierVerdict(
            v.pose_id,
            v.joint_index,
            v.score,
            v.annotated,
            flagged=v.annotated and v.score >= threshold,
            threshold_used=threshold,
        )
        for v in verdicts
    ]


def flag(verdicts: Iterable[OutlierVerdict], threshold: float) -> List[OutlierVerdict]:
    """The flagged subset; keypoints without an annotation are never flagged."""
    return [v for v in apply_threshold(verdicts, threshold) if v.flagged]


def verdicts_to_csv(verdicts: Sequence[OutlierVerdict]) -> str:
    lines = ["pose_id,joint_index,annotated,score,flagged"]
    for v in verdicts:
        lines.append(f"{v.pose_id},{v.joint_index},{int(v.annotated)},{v.score:.12g},{int(v.flagged)}")
    return "\n".join(lines) + "\n"


def verdicts_to_json(verdicts: Sequence[OutlierVerdict]) -> str:
    return json.dumps(
        [
            {
                "pose_id": v.pose_id,
                "joint_index": v.joint_index,
                "annotated": v.annotated,
                "score": v.score,
                "flagged": v.flagged,
                "threshold_used": None if math.isnan(v.threshold_used) else v.threshold_used,
            }
            for v in verdicts
        ],
        indent=2,
    )


def verdicts_from_json(text: str) -> List[OutlierVerdict]:
    out = []
    for rec in json.loads(text):
        thr = rec.get("threshold_used")
        out.append(
            OutlierVerdict(
                pose_id=str(rec["pose_id"]),
                joint_index=int(rec["joint_index"]),
                score=float(rec["score"]),
                annotated=bool(rec["annotated"]),
                flagged=bool(rec.get("flagged", False)),
                threshold_used=math.nan if thr is None else float(thr),
            )
        )
    return out


FOREST_FORMAT = "kpclean-iforest-v1"


def save_forest(model: IsolationForestModel, path: Union[str, Path]) -> None:
    doc = {
        "format": FOREST_FORMAT,
        "n_trees": model.n_trees,
        "psi": model.psi,
        "seed": model.seed,
        "n_features": model.n_features,
        "c_psi": model.c_psi,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "path": t.path.tolist(),
            }
            for t in model.trees
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_forest(path: Union[str, Path]) -> IsolationForestModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FOREST_FORMAT:
        raise ValueError(f"unsupported forest artifact format {doc.get('format')!r}")
    trees = tuple(
        _Tree(
            feature=np.asarray(t["feature"], dtype=np.int32),
            threshold=np.asarray(t["threshold"], dtype=np.float64),
            left=np.asarray(t["left"], dtype=np.int32),
            right=np.asarray(t["right"], dtype=np.int32),
            path=np.asarray(t["path"], dtype=np.float64),
        )
        for t in doc["trees"]
    )
    return IsolationForestModel(
        trees=trees,
        n_trees=int(doc["n_trees"]),
        psi=int(doc["psi"]),
        seed=int(doc["seed"]),
        n_features=int(doc["n_features"]),
        c_psi=float(doc["c_psi"]),
    )
