"""Build the 3-image COCO-style fixture and its golden evaluation numbers.

The golden values come from a transcription of the reference evaluator
(tests/reference_cocoeval.py) and are committed under tests/golden/.
Rerun this script only to regenerate the fixture from scratch; tests
compare the production evaluator against the committed output.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from reference_cocoeval import ReferenceKeypointEval  # noqa: E402

GOLDEN_DIR = ROOT / "tests" / "golden"


def person_keypoints(rng, cx, cy, spread, n_unlabeled=2):
    """17 plausible joints around (cx, cy); a few unlabeled slots."""
    offsets = np.array(
        [
            (0.0, -0.42), (-0.05, -0.46), (0.05, -0.46), (-0.12, -0.44), (0.12, -0.44),
            (-0.2, -0.25), (0.2, -0.25), (-0.28, -0.05), (0.28, -0.05),
            (-0.3, 0.12), (0.3, 0.12), (-0.12, 0.05), (0.12, 0.05),
            (-0.14, 0.28), (0.14, 0.28), (-0.15, 0.46), (0.15, 0.46),
        ]
    )
    pts = np.stack([cx + offsets[:, 0] * spread, cy + offsets[:, 1] * spread], axis=1)
    pts += rng.normal(0, 0.01 * spread, size=pts.shape)
    vis = np.full(17, 2, dtype=int)
    unlabeled = rng.choice(17, size=n_unlabeled, replace=False)
    vis[unlabeled] = 0
    flat = []
    for i in range(17):
        if vis[i] == 0:
            flat += [0.0, 0.0, 0]
        else:
            flat += [float(pts[i, 0]), float(pts[i, 1]), int(vis[i])]
    return flat, pts


def predicted_joints(rng, true_pts, noise, conf_range=(0.55, 0.95)):
    joints = []
    for x, y in true_pts:
        joints.append(
            [
                float(x + rng.normal(0, noise)),
                float(y + rng.normal(0, noise)),
                float(rng.uniform(*conf_range)),
            ]
        )
    return joints


def build_fixture():
    rng = np.random.default_rng(20240)
    images = [
        {"id": 101, "file_name": "img101.jpg", "width": 640, "height": 480},
        {"id": 102, "file_name": "img102.jpg", "width": 640, "height": 480},
        {"id": 103, "file_name": "img103.jpg", "width": 640, "height": 480},
    ]
    annotations = []
    dump_poses = []
    ann_id = 1

    def add_person(image_id, cx, cy, spread, area, pred_noise, n_unlabeled=2, predict=True):
        nonlocal ann_id
        flat, pts = person_keypoints(rng, cx, cy, spread, n_unlabeled)
        half = spread * 0.55
        annotations.append(
            {
                "id": ann_id,
                "image_id": image_id,
                "category_id": 1,
                "keypoints": flat,
                "num_keypoints": sum(1 for v in flat[2::3] if v > 0),
                "bbox": [cx - half, cy - half, 2 * half, 2 * half],
                "area": area,
                "iscrowd": 0,
            }
        )
        if predict:
            dump_poses.append(
                {"pose_id": str(ann_id), "joints": predicted_joints(rng, pts, pred_noise)}
            )
        ann_id += 1
        return pts

    # image 101: one medium person, one large person, plus a spurious detection
    add_person(101, 150, 200, 80, 70.0 ** 2, 1.5)      # medium, well predicted
    pts_large = add_person(101, 420, 240, 200, 130.0 ** 2, 3.0)  # large
    dump_poses.append(
        {
            "pose_id": "9901",  # unknown pose id: a detector hallucination
            "joints": predicted_joints(rng, pts_large + np.array([180.0, -60.0]), 6.0, (0.1, 0.3)),
        }
    )

    # image 102: large person with sloppier prediction, a crowd region and
    # an empty (zero-keypoint) annotation
    add_person(102, 300, 250, 180, 115.0 ** 2, 9.0)
    annotations.append(
        {
            "id": ann_id,
            "image_id": 102,
            "category_id": 1,
            "keypoints": [0.0] * 51,
            "num_keypoints": 0,
            "bbox": [20.0, 20.0, 120.0, 90.0],
            "area": 10800.0,
            "iscrowd": 1,
        }
    )
    ann_id += 1
    annotations.append(
        {
            "id": ann_id,
            "image_id": 102,
            "category_id": 1,
            "keypoints": [0.0] * 51,
            "num_keypoints": 0,
            "bbox": [500.0, 300.0, 60.0, 80.0],
            "area": 4800.0,
            "iscrowd": 0,
        }
    )
    ann_id += 1

    # image 103: two medium persons; one misses its prediction entirely,
    # the other gets a left/right-confused prediction (low OKS)
    add_person(103, 180, 220, 85, 75.0 ** 2, 1.2)
    pts = add_person(103, 430, 230, 90, 80.0 ** 2, 2.0, predict=False)
    swapped = pts.copy()
    for left, right in ((1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16)):
        swapped[[left, right]] = swapped[[right, left]]
    dump_poses.append({"pose_id": str(ann_id - 1), "joints": predicted_joints(rng, swapped, 2.0)})

    gt_doc = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": 1, "name": "person"}],
    }
    dump = {"model_id": "sim_hrnet", "convention": "COCO17", "poses": dump_poses}
    return gt_doc, dump


def dump_to_dt_records(gt_doc, dump):
    """Detections exactly as the production evaluator derives them."""
    pose_to_image = {str(a["id"]): a["image_id"] for a in gt_doc["annotations"]}
    records = []
    for pose in dump["poses"]:
        image_id = pose_to_image.get(pose["pose_id"])
        if image_id is None:
            continue
        flat = []
        for x, y, c in pose["joints"]:
            flat += [x, y, c]
        score = float(np.mean([j[2] for j in pose["joints"]]))
        records.append({"image_id": image_id, "keypoints": flat, "score": score})
    return records


def main():
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    gt_doc, dump = build_fixture()
    (GOLDEN_DIR / "coco3_annotations.json").write_text(json.dumps(gt_doc, indent=1))
    (GOLDEN_DIR / "coco3_predictions.json").write_text(json.dumps(dump, indent=1))

    evaluator = ReferenceKeypointEval(gt_doc, dump_to_dt_records(gt_doc, dump))
    stats = evaluator.run()
    golden = {
        "stats": {
            name: float(value)
            for name, value in zip(
                ["AP", "AP.5", "AP.75", "AP(M)", "AP(L)", "AR", "AR.5", "AR.75", "AR(M)", "AR(L)"],
                stats,
            )
        },
        "precision": evaluator.eval["precision"][:, :, :, 0].tolist(),
        "recall": evaluator.eval["recall"][:, :, 0].tolist(),
    }
    (GOLDEN_DIR / "cocoeval_golden.json").write_text(json.dumps(golden))
    print("fixture and golden written to", GOLDEN_DIR)
    for name, value in golden["stats"].items():
        print(f"  {name:7s} {value:.6f}")


if __name__ == "__main__":
    main()
