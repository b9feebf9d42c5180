from .cocoeval import coco_eval
from .distances import FEATURE_NORMS, JointDistanceRecord, extract_distances
from .oks import Matching, match_predictions, oks
from .pckh import HEAD_BIAS, JOINT_GROUPS, MASKED_JOINTS, pckh
from .report import MetricReport

__all__ = [
    "coco_eval",
    "extract_distances",
    "FEATURE_NORMS",
    "JointDistanceRecord",
    "Matching",
    "match_predictions",
    "oks",
    "pckh",
    "HEAD_BIAS",
    "JOINT_GROUPS",
    "MASKED_JOINTS",
    "MetricReport",
]
