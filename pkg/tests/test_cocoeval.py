import json
import time

import numpy as np
import pytest

from kpclean import coco_eval, parse_coco, parse_predictions
from kpclean.metrics.cocoeval import coco_eval_arrays
from kpclean.skeleton import COCO17

from conftest import make_coco_bundle, make_coco_pose, predictions_from_bundle
from reference_cocoeval import ReferenceKeypointEval


@pytest.fixture(scope="module")
def fixture3(golden_dir_module):
    bundle = parse_coco(golden_dir_module / "coco3_annotations.json")
    preds = parse_predictions(golden_dir_module / "coco3_predictions.json", COCO17)
    golden = json.loads((golden_dir_module / "cocoeval_golden.json").read_text())
    return bundle, preds, golden


@pytest.fixture(scope="module")
def golden_dir_module():
    from conftest import GOLDEN_DIR

    return GOLDEN_DIR


def test_matches_reference_stats(fixture3):
    bundle, preds, golden = fixture3
    start = time.perf_counter()
    report, precision, recall = coco_eval_arrays(bundle, preds)
    elapsed = time.perf_counter() - start
    for name, expected in golden["stats"].items():
        assert report.metrics[name] / 100.0 == pytest.approx(expected, abs=1e-6), name
    assert elapsed < 1.0


def test_matches_reference_all_thresholds(fixture3):
    bundle, preds, golden = fixture3
    _, precision, recall = coco_eval_arrays(bundle, preds)
    ref_precision = np.asarray(golden["precision"])
    ref_recall = np.asarray(golden["recall"])
    assert precision.shape == ref_precision.shape
    assert recall.shape == ref_recall.shape
    np.testing.assert_allclose(precision, ref_precision, atol=1e-6)
    np.testing.assert_allclose(recall, ref_recall, atol=1e-6)
    # the -1 "undefined" sentinels must coincide exactly
    assert ((precision == -1) == (ref_precision == -1)).all()


def test_golden_file_is_reproducible(fixture3, golden_dir_module):
    # guard against drift between the committed fixture and golden numbers
    import sys

    sys.path.insert(0, str(golden_dir_module.parent.parent / "scripts"))
    from make_golden_cocoeval import dump_to_dt_records

    gt_doc = json.loads((golden_dir_module / "coco3_annotations.json").read_text())
    dump = json.loads((golden_dir_module / "coco3_predictions.json").read_text())
    _, _, golden = fixture3
    stats = ReferenceKeypointEval(gt_doc, dump_to_dt_records(gt_doc, dump)).run()
    for value, (name, expected) in zip(stats, golden["stats"].items()):
        assert value == pytest.approx(expected, abs=1e-12), name


def test_perfect_predictions_ap_100():
    anns = [make_coco_pose(f"a{i}", center=(150.0 + 150 * i, 200.0)) for i in range(3)]
    bundle = make_coco_bundle(anns)
    preds = predictions_from_bundle(bundle)
    report = coco_eval(bundle, preds)
    assert report.metrics["AP"] == pytest.approx(100.0)
    assert report.metrics["AR"] == pytest.approx(100.0)


def test_adding_perfect_image_never_decreases_ap(fixture3):
    bundle, preds, _ = fixture3
    base = coco_eval(bundle, preds).metrics["AP"]

    from kpclean.ingest import DatasetBundle, ImageInfo

    extra = make_coco_pose("50000", image_id="999", center=(300.0, 240.0))
    images = dict(bundle.images)
    images["999"] = ImageInfo(file_name="999.jpg", width=640, height=480)
    grown = DatasetBundle(
        convention=COCO17,
        annotations=bundle.annotations + (extra,),
        images=images,
        source_digest=bundle.source_digest,
    )
    extra_preds = predictions_from_bundle(make_coco_bundle([extra]), confidence=0.99)
    entries = dict(preds.entries)
    entries.update(extra_preds.entries)
    from kpclean.skeleton import PredictionSet

    merged = PredictionSet(model_id=preds.model_id, convention=COCO17, entries=entries)
    assert coco_eval(grown, merged).metrics["AP"] >= base


def test_convention_mismatch_rejected():
    from conftest import make_mpii_bundle, make_mpii_pose

    bundle = make_mpii_bundle([make_mpii_pose("p0")])
    preds = predictions_from_bundle(bundle)
    with pytest.raises(ValueError):
        coco_eval(bundle, preds)


def test_exclusion_matches_reference_with_edited_gt(fixture3, golden_dir_module):
    # excluding keypoints must equal reference evaluation on a gt file where
    # those keypoints are zeroed out
    import sys

    sys.path.insert(0, str(golden_dir_module.parent.parent / "scripts"))
    from make_golden_cocoeval import dump_to_dt_records

    bundle, preds, _ = fixture3
    exclude = {("1", 0), ("1", 5), ("3", 10)}

    gt_doc = json.loads((golden_dir_module / "coco3_annotations.json").read_text())
    dump = json.loads((golden_dir_module / "coco3_predictions.json").read_text())
    for ann in gt_doc["annotations"]:
        for pose_id, j in exclude:
            if str(ann["id"]) == pose_id:
                ann["keypoints"][3 * j : 3 * j + 3] = [0.0, 0.0, 0]
        ann["num_keypoints"] = sum(1 for v in ann["keypoints"][2::3] if v > 0)
    expected = ReferenceKeypointEval(gt_doc, dump_to_dt_records(gt_doc, dump)).run()

    report = coco_eval(bundle, preds, exclude=exclude)
    names = ["AP", "AP.5", "AP.75", "AP(M)", "AP(L)", "AR", "AR.5", "AR.75", "AR(M)", "AR(L)"]
    for name, value in zip(names, expected):
        assert report.metrics[name] / 100.0 == pytest.approx(float(value), abs=1e-9), name
