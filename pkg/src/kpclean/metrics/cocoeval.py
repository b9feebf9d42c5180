"""COCO keypoint AP/AR evaluation, faithful to the reference evaluator.

The protocol mirrors benchmark usage with ground-truth boxes: every pose in
the prediction dump becomes one detection whose score is its mean joint
confidence and whose area/bbox follow the keypoint-extent convention of the
reference result loader. Matching is greedy per OKS threshold
{0.50, 0.55, ..., 0.95}; precision is interpolated over 101 recall points.
Numbers agree with the reference implementation bit-for-bit on fixtures.
"""
from __future__ import annotations

from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from ..ingest import DatasetBundle
from ..skeleton import COCO17, PoseAnnotation, PredictionSet
from .report import MetricReport

IOU_THRS = np.linspace(0.5, 0.95, 10)
REC_THRS = np.linspace(0.0, 1.00, 101)
MAX_DETS = 20
AREA_RNG = ((0.0, 1e10), (32.0 ** 2, 96.0 ** 2), (96.0 ** 2, 1e10))
AREA_LBL = ("all", "medium", "large")

ExcludeSet = Set[Tuple[str, int]]


def _sort_key(image_id: str):
    try:
        return (0, int(image_id), image_id)
    except ValueError:
        return (1, 0, image_id)


class _Gt:
    __slots__ = ("pose_id", "xy", "vis", "bbox", "area", "ignore", "iscrowd", "num_labeled")

    def __init__(self, ann: PoseAnnotation, exclude: ExcludeSet):
        self.pose_id = ann.pose_id
        self.xy = np.array([[kp.x, kp.y] for kp in ann.keypoints], dtype=np.float64)
        vis = np.array([int(kp.visibility) for kp in ann.keypoints], dtype=np.float64)
        for (pose_id, j) in exclude:
            if pose_id == ann.pose_id:
                vis[j] = 0.0
        self.vis = vis
        self.bbox = ann.bbox
        self.area = float(ann.area)
        self.iscrowd = ann.iscrowd
        self.num_labeled = int(np.count_nonzero(vis > 0))
        self.ignore = ann.iscrowd or self.num_labeled == 0


class _Dt:
    __slots__ = ("pose_id", "xy", "score", "area")

    def __init__(self, pose_id: str, joints: np.ndarray):
        self.pose_id = pose_id
        self.xy = joints[:, :2].astype(np.float64)
        self.score = float(np.mean(joints[:, 2]))
        # Reference result-loader convention: detection area is the extent
        # box of all predicted keypoints.
        x0, x1 = float(np.min(joints[:, 0])), float(np.max(joints[:, 0]))
        y0, y1 = float(np.min(joints[:, 1])), float(np.max(joints[:, 1]))
        self.area = (x1 - x0) * (y1 - y0)


def _compute_oks_matrix(gts: List[_Gt], dts: List[_Dt], k_consts: np.ndarray) -> np.ndarray:
    if len(gts) == 0 or len(dts) == 0:
        return np.zeros((0, 0))
    variances = k_consts ** 2
    n_joints = len(k_consts)
    ious = np.zeros((len(dts), len(gts)))
    for j, gt in enumerate(gts):
        xg, yg, vg = gt.xy[:, 0], gt.xy[:, 1], gt.vis
        k1 = np.count_nonzero(vg > 0)
        bx, by, bw, bh = gt.bbox
        x0, x1 = bx - bw, bx + bw * 2
        y0, y1 = by - bh, by + bh * 2
        for i, dt in enumerate(dts):
            xd, yd = dt.xy[:, 0], dt.xy[:, 1]
            if k1 > 0:
                dx = xd - xg
                dy = yd - yg
            else:
                # crowd/empty gt: distance to the doubled box
                z = np.zeros(n_joints)
                dx = np.max((z, x0 - xd), axis=0) + np.max((z, xd - x1), axis=0)
                dy = np.max((z, y0 - yd), axis=0) + np.max((z, yd - y1), axis=0)
            e = (dx ** 2 + dy ** 2) / variances / (gt.area + np.spacing(1)) / 2
            if k1 > 0:
                e = e[vg > 0]
            ious[i, j] = np.sum(np.exp(-e)) / e.shape[0]
    return ious


def _evaluate_image(gts: List[_Gt], dts: List[_Dt], ious: np.ndarray, area_rng) -> Optional[dict]:
    if len(gts) == 0 and len(dts) == 0:
        return None
    g_ignore = np.array(
        [1 if (g.ignore or g.area < area_rng[0] or g.area > area_rng[1]) else 0 for g in gts]
    )
    gtind = np.argsort(g_ignore, kind="mergesort")
    gt = [gts[i] for i in gtind]
    dt = dts[:MAX_DETS]
    iscrowd = [int(g.iscrowd) for g in gt]
    ious = ious[:, gtind] if len(ious) > 0 else ious

    T = len(IOU_THRS)
    G = len(gt)
    D = len(dt)
    gtm = np.zeros((T, G))
    dtm = np.zeros((T, D))
    gt_ig = np.array([g_ignore[i] for i in gtind])
    dt_ig = np.zeros((T, D))
    if len(ious) != 0:
        for tind, t in enumerate(IOU_THRS):
            for dind in range(D):
                iou = min(t, 1 - 1e-10)
                m = -1
                for gind in range(G):
                    if gtm[tind, gind] > 0 and not iscrowd[gind]:
                        continue
                    if m > -1 and gt_ig[m] == 0 and gt_ig[gind] == 1:
                        break
                    if ious[dind, gind] < iou:
                        continue
                    iou = ious[dind, gind]
                    m = gind
                if m == -1:
                    continue
                dt_ig[tind, dind] = gt_ig[m]
                dtm[tind, dind] = 1 + m  # any non-zero marker for "matched"
                gtm[tind, m] = 1 + dind
    out_of_range = np.array(
        [d.area < area_rng[0] or d.area > area_rng[1] for d in dt]
    ).reshape((1, D))
    dt_ig = np.logical_or(dt_ig, np.logical_and(dtm == 0, np.repeat(out_of_range, T, 0)))
    return {
        "dtMatches": dtm,
        "dtScores": [d.score for d in dt],
        "gtIgnore": gt_ig,
        "dtIgnore": dt_ig,
    }


def _accumulate(eval_imgs: List[List[Optional[dict]]]) -> Tuple[np.ndarray, np.ndarray]:
    T = len(IOU_THRS)
    R = len(REC_THRS)
    A = len(AREA_RNG)
    precision = -np.ones((T, R, A))
    recall = -np.ones((T, A))
    for a in range(A):
        E = [e for e in eval_imgs[a] if e is not None]
        if len(E) == 0:
            continue
        dt_scores = np.concatenate([np.asarray(e["dtScores"])[0:MAX_DETS] for e in E])
        inds = np.argsort(-dt_scores, kind="mergesort")
        dt_scores_sorted = dt_scores[inds]
        dtm = np.concatenate([e["dtMatches"][:, 0:MAX_DETS] for e in E], axis=1)[:, inds]
        dt_ig = np.concatenate([e["dtIgnore"][:, 0:MAX_DETS] for e in E], axis=1)[:, inds]
        gt_ig = np.concatenate([e["gtIgnore"] for e in E])
        npig = np.count_nonzero(gt_ig == 0)
        if npig == 0:
            continue
        tps = np.logical_and(dtm, np.logical_not(dt_ig))
        fps = np.logical_and(np.logical_not(dtm), np.logical_not(dt_ig))
        tp_sum = np.cumsum(tps, axis=1).astype(dtype=np.float64)
        fp_sum = np.cumsum(fps, axis=1).astype(dtype=np.float64)
        for t, (tp, fp) in enumerate(zip(tp_sum, fp_sum)):
            tp = np.array(tp)
            fp = np.array(fp)
            nd = len(tp)
            rc = tp / npig
            pr = tp / (fp + tp + np.spacing(1))
            q = np.zeros((R,))
            if nd:
                recall[t, a] = rc[-1]
            else:
                recall[t, a] = 0
            pr = pr.tolist()
            q = q.tolist()
            for i in range(nd - 1, 0, -1):
                if pr[i] > pr[i - 1]:
                    pr[i - 1] = pr[i]
            inds_r = np.searchsorted(rc, REC_THRS, side="left")
            try:
                for ri, pi in enumerate(inds_r):
                    q[ri] = pr[pi]
            except IndexError:
                pass
            precision[t, :, a] = np.array(q)
    return precision, recall


def _summarize(precision: np.ndarray, recall: np.ndarray) -> Dict[str, float]:
    def stat(ap: bool, iou_thr: Optional[float], area_lbl: str) -> float:
        aind = AREA_LBL.index(area_lbl)
        if ap:
            s = precision
            if iou_thr is not None:
                s = s[np.where(iou_thr == IOU_THRS)[0]]
            s = s[:, :, aind]
        else:
            s = recall
            if iou_thr is not None:
                s = s[np.where(iou_thr == IOU_THRS)[0]]
            s = s[:, aind]
        valid = s[s > -1]
        return float(np.mean(valid)) if len(valid) else -1.0

    raw = {
        "AP": stat(True, None, "all"),
        "AP.5": stat(True, 0.5, "all"),
        "AP.75": stat(True, 0.75, "all"),
        "AP(M)": stat(True, None, "medium"),
        "AP(L)": stat(True, None, "large"),
        "AR": stat(False, None, "all"),
        "AR.5": stat(False, 0.5, "all"),
        "AR.75": stat(False, 0.75, "all"),
        "AR(M)": stat(False, None, "medium"),
        "AR(L)": stat(False, None, "large"),
    }
    return {k: (v * 100.0 if v >= 0 else v) for k, v in raw.items()}


def coco_eval(
    bundle: DatasetBundle,
    predictions: PredictionSet,
    exclude: Optional[ExcludeSet] = None,
    label: str = "RAW",
) -> MetricReport:
    """AP/AR over OKS thresholds with all/medium/large area splits."""
    report, _, _ = coco_eval_arrays(bundle, predictions, exclude=exclude, label=label)
    return report


def coco_eval_arrays(
    bundle: DatasetBundle,
    predictions: PredictionSet,
    exclude: Optional[ExcludeSet] = None,
    label: str = "RAW",
) -> Tuple[MetricReport, np.ndarray, np.ndarray]:
    """Like :func:`coco_eval` but also returns the raw accumulation arrays:
    interpolated precision (T, R, A) and recall (T, A) over all OKS
    thresholds, recall points and area ranges (-1 where undefined)."""
    if bundle.convention is not COCO17:
        raise ValueError("coco_eval requires a COCO17 bundle")
    if predictions.convention is not COCO17:
        raise ValueError("prediction convention mismatch")
    exclude = exclude or set()
    k_consts = np.asarray(bundle.convention.oks_k)

    pose_to_image = {a.pose_id: a.image_id for a in bundle.annotations}
    image_ids = sorted(bundle.images, key=_sort_key)
    gts_by_image: Dict[str, List[_Gt]] = {img: [] for img in image_ids}
    for ann in bundle.annotations:
        gts_by_image[ann.image_id].append(_Gt(ann, exclude))
    dts_by_image: Dict[str, List[_Dt]] = {img: [] for img in image_ids}
    for pose_id, joints in predictions.entries.items():
        image_id = pose_to_image.get(pose_id)
        if image_id is None:
            continue
        dts_by_image[image_id].append(_Dt(pose_id, joints))

    eval_imgs: List[List[Optional[dict]]] = [[] for _ in AREA_RNG]
    n_matched_poses = 0
    n_keypoints = 0
    for image_id in image_ids:
        gts = gts_by_image[image_id]
        dts = dts_by_image[image_id]
        order = np.argsort([-d.score for d in dts], kind="mergesort")
        dts = [dts[i] for i in order][:MAX_DETS]
        ious = _compute_oks_matrix(gts, dts, k_consts)
        for a, rng in enumerate(AREA_RNG):
            eval_imgs[a].append(_evaluate_image(gts, dts, ious, rng))
        n_matched_poses += sum(1 for g in gts if not g.ignore)
        n_keypoints += sum(g.num_labeled for g in gts)

    precision, recall = _accumulate(eval_imgs)
    report = MetricReport(
        convention=bundle.convention.name,
        metrics=_summarize(precision, recall),
        pose_count=n_matched_poses,
        keypoint_count=n_keypoints,
        label=label,
    )
    return report, precision, recall
