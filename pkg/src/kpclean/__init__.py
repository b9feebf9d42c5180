"""kpclean: find, review and remove faulty keypoint annotations."""

from .skeleton import (
    COCO17,
    MPII16,
    Difficulty,
    ErrorClass,
    Keypoint,
    PoseAnnotation,
    PredictionSet,
    SkeletonConvention,
    Visibility,
    get_convention,
    in_bbox,
    outside_bbox_rate,
)
from .ingest import (
    DatasetBundle,
    ImageInfo,
    ParseError,
    parse_coco,
    parse_mpii,
    parse_predictions,
    write_bundle,
    write_coco,
    write_mpii,
    write_predictions,
)
from .metrics import (
    JointDistanceRecord,
    MetricReport,
    coco_eval,
    extract_distances,
    match_predictions,
    oks,
    pckh,
)
from .detect import (
    DeviationVector,
    IsolationForestModel,
    OutlierVerdict,
    apply_threshold,
    build_features,
    fit_forest,
    flag,
    load_forest,
    save_forest,
    score,
    score_matrix,
    score_verdicts,
)
from .calibrate import (
    CalibrationAmbiguousError,
    CalibrationResult,
    ScoreHistogram,
    calibrate_threshold,
    histogram,
)
from .cleanse import (
    CleaningManifest,
    RemovalRecord,
    ReportDiff,
    across_model_variance,
    apply_cleaning,
    diff_reports,
    hc_from_verdicts,
    removals_from_flags,
)
from .statslab import (
    DetectorDiagnostics,
    ErrorFrequencyTable,
    Heatmap,
    RemovalDistribution,
    compression_ratio,
    detector_diagnostics,
    error_frequency,
    evaluate_metric,
    inject_jitter,
    jitter_compression_curve,
    removal_distribution,
    render_heatmap,
    sample_size,
    significance,
)
from .synth import SyntheticDataset, make_synthetic

__version__ = "0.1.0"
