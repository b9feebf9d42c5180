"""Strict parsers and writers for annotation and prediction files.

Supported inputs:
  * COCO person-keypoints JSON (``images``/``annotations``/``categories``).
  * Converted MPII JSON (one record per pose: ``joints``, ``joints_vis``,
    ``center``, ``scale``, ``image``), with head boxes either inline
    (``headbox`` per record) or in a companion JSON file.
  * Prediction dumps: ``{model_id, convention, poses: [{pose_id, joints:
    [[x, y, confidence], ...]}]}``, one file per model.

Any input may be gzip-compressed. Parsing is strict: malformed records
raise :class:`ParseError` naming the offending record and field path.
"""
from __future__ import annotations

import gzip
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .skeleton import (
    COCO17,
    MPII16,
    MPII_SCALE_UNIT,
    Keypoint,
    PoseAnnotation,
    PredictionSet,
    SkeletonConvention,
    Visibility,
    unlabeled_keypoint,
)

PathLike = Union[str, Path]


class ParseError(ValueError):
    """Raised on malformed input; carries the offending field path."""

    def __init__(self, message: str, *, path: str = "", source: str = ""):
        self.field_path = path
        self.source = source
        prefix = f"{source}: " if source else ""
        at = f" at {path}" if path else ""
        super().__init__(f"{prefix}{message}{at}")


@dataclass(frozen=True, slots=True)
class ImageInfo:
    file_name: str
    width: Optional[int] = None
    height: Optional[int] = None


@dataclass(frozen=True, slots=True)
class DatasetBundle:
    convention: SkeletonConvention
    annotations: Tuple[PoseAnnotation, ...]
    images: Mapping[str, ImageInfo]
    source_digest: str
    warnings: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        seen = set()
        for ann in self.annotations:
            if ann.pose_id in seen:
                raise ValueError(f"duplicate pose_id {ann.pose_id!r}")
            seen.add(ann.pose_id)
            if ann.image_id not in self.images:
                raise ValueError(f"pose {ann.pose_id}: unresolved image_id {ann.image_id!r}")
            if len(ann.keypoints) != self.convention.joint_count:
                raise ValueError(
                    f"pose {ann.pose_id}: {len(ann.keypoints)} keypoints for "
                    f"{self.convention.name}"
                )

    def __len__(self) -> int:
        return len(self.annotations)

    @property
    def usable(self) -> Tuple[PoseAnnotation, ...]:
        """Annotations that enter evaluation: non-crowd with >= 1 labeled keypoint."""
        return tuple(a for a in self.annotations if not a.iscrowd and not a.is_empty)

    def get(self, pose_id: str) -> PoseAnnotation:
        for ann in self.annotations:
            if ann.pose_id == pose_id:
                return ann
        raise KeyError(pose_id)

    def by_image(self) -> Mapping[str, Tuple[PoseAnnotation, ...]]:
        grouped: dict[str, list[PoseAnnotation]] = {}
        for ann in self.annotations:
            grouped.setdefault(ann.image_id, []).append(ann)
        return {k: tuple(v) for k, v in grouped.items()}

    def labeled_keypoint_count(self) -> int:
        return sum(a.num_labeled for a in self.usable)

    def with_annotations(self, annotations: Iterable[PoseAnnotation]) -> "DatasetBundle":
        return DatasetBundle(
            convention=self.convention,
            annotations=tuple(annotations),
            images=self.images,
            source_digest=self.source_digest,
            warnings=self.warnings,
        )


def _read_bytes(path: PathLike) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _load_json(path: PathLike):
    raw = _read_bytes(path)
    try:
        return json.loads(raw), hashlib.sha256(raw).hexdigest()
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc})", source=str(path)) from exc


def _require(record: Mapping, key: str, where: str, source: str):
    if key not in record:
        raise ParseError(f"missing field {key!r}", path=where, source=source)
    return record[key]


def _finite(value, where: str, source: str) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ParseError(f"expected a number, got {value!r}", path=where, source=source)
    if not math.isfinite(x):
        raise ParseError(f"non-finite value {value!r}", path=where, source=source)
    return x


def _keypoints_from_triples(
    flat: Sequence[float], joint_count: int, where: str, source: str, warnings: list[str]
) -> Tuple[Keypoint, ...]:
    if len(flat) != 3 * joint_count:
        raise ParseError(
            f"keypoints array has length {len(flat)}, expected {3 * joint_count}",
            path=where,
            source=source,
        )
    kps = []
    for j in range(joint_count):
        x = _finite(flat[3 * j], f"{where}[{3 * j}]", source)
        y = _finite(flat[3 * j + 1], f"{where}[{3 * j + 1}]", source)
        v = flat[3 * j + 2]
        if v not in (0, 1, 2):
            raise ParseError(f"visibility flag {v!r} not in {{0,1,2}}", path=f"{where}[{3 * j + 2}]", source=source)
        if v == 0:
            if x != 0.0 or y != 0.0:
                warnings.append(f"{where}: joint {j} unlabeled with non-zero coordinates, normalized to (0,0)")
            kps.append(unlabeled_keypoint())
        else:
            kps.append(Keypoint(x, y, Visibility(int(v))))
    return tuple(kps)


def parse_coco(path: PathLike) -> DatasetBundle:
    """Parse a COCO person-keypoints file into a bundle, strictly."""
    doc, digest = _load_json(path)
    source = str(path)
    for key in ("images", "annotations", "categories"):
        _require(doc, key, key, source)

    images: dict[str, ImageInfo] = {}
    for i, rec in enumerate(doc["images"]):
        where = f"images[{i}]"
        img_id = str(_require(rec, "id", where, source))
        images[img_id] = ImageInfo(
            file_name=str(_require(rec, "file_name", where, source)),
            width=int(_require(rec, "width", where, source)),
            height=int(_require(rec, "height", where, source)),
        )

    warnings: list[str] = []
    annotations = []
    for i, rec in enumerate(doc["annotations"]):
        ann_id = rec.get("id", i)
        where = f"annotations[{i}](id={ann_id})"
        keypoints = _keypoints_from_triples(
            _require(rec, "keypoints", f"{where}.keypoints", source),
            COCO17.joint_count,
            f"{where}.keypoints",
            source,
            warnings,
        )
        bbox = _require(rec, "bbox", f"{where}.bbox", source)
        if len(bbox) != 4:
            raise ParseError("bbox must have 4 entries", path=f"{where}.bbox", source=source)
        bbox = tuple(_finite(v, f"{where}.bbox[{k}]", source) for k, v in enumerate(bbox))
        area = _finite(_require(rec, "area", f"{where}.area", source), f"{where}.area", source)
        image_id = str(_require(rec, "image_id", f"{where}.image_id", source))
        if image_id not in images:
            raise ParseError(f"unknown image_id {image_id!r}", path=f"{where}.image_id", source=source)
        try:
            annotations.append(
                PoseAnnotation(
                    pose_id=str(ann_id),
                    image_id=image_id,
                    keypoints=keypoints,
                    bbox=bbox,
                    area=area,
                    iscrowd=bool(rec.get("iscrowd", 0)),
                )
            )
        except ValueError as exc:
            raise ParseError(str(exc), path=where, source=source) from exc

    return DatasetBundle(
        convention=COCO17,
        annotations=tuple(annotations),
        images=images,
        source_digest=digest,
        warnings=tuple(warnings),
    )


def _mpii_bbox(center: Tuple[float, float], scale: float) -> Tuple[float, float, float, float]:
    side = scale * MPII_SCALE_UNIT
    return (center[0] - side / 2.0, center[1] - side / 2.0, side, side)


def parse_mpii(path: PathLike, headbox_path: Optional[PathLike] = None) -> DatasetBundle:
    """Parse converted MPII JSON; head boxes inline or from a companion file.

    The companion file is a JSON list aligned with the pose list by index;
    entries are ``[x1, y1, x2, y2]`` or null. Poses without a head box stay
    in the bundle but are excluded from PCKh (recorded as a warning).
    """
    doc, digest = _load_json(path)
    source = str(path)
    if not isinstance(doc, list):
        raise ParseError("expected a top-level list of pose records", source=source)

    headboxes: Optional[list] = None
    if headbox_path is not None:
        hb_doc, hb_digest = _load_json(headbox_path)
        if not isinstance(hb_doc, list):
            raise ParseError("expected a top-level list of head boxes", source=str(headbox_path))
        if len(hb_doc) != len(doc):
            raise ParseError(
                f"{len(hb_doc)} head boxes for {len(doc)} poses",
                source=str(headbox_path),
            )
        headboxes = hb_doc
        digest = hashlib.sha256((digest + hb_digest).encode()).hexdigest()

    warnings: list[str] = []
    annotations = []
    images: dict[str, ImageInfo] = {}
    for i, rec in enumerate(doc):
        where = f"poses[{i}]"
        joints = _require(rec, "joints", f"{where}.joints", source)
        joints_vis = _require(rec, "joints_vis", f"{where}.joints_vis", source)
        if len(joints) != MPII16.joint_count:
            raise ParseError(
                f"joints has length {len(joints)}, expected {MPII16.joint_count}",
                path=f"{where}.joints",
                source=source,
            )
        if len(joints_vis) != len(joints):
            raise ParseError(
                f"joints_vis length {len(joints_vis)} != joints length {len(joints)}",
                path=f"{where}.joints_vis",
                source=source,
            )
        kps = []
        for j, (xy, vis) in enumerate(zip(joints, joints_vis)):
            if vis not in (0, 1):
                raise ParseError(f"visibility flag {vis!r} not in {{0,1}}", path=f"{where}.joints_vis[{j}]", source=source)
            if not vis:
                x = _finite(xy[0], f"{where}.joints[{j}]", source)
                y = _finite(xy[1], f"{where}.joints[{j}]", source)
                if (x, y) not in ((0.0, 0.0), (-1.0, -1.0)):
                    warnings.append(f"{where}: joint {j} unlabeled with coordinates {xy}, normalized")
                kps.append(unlabeled_keypoint())
            else:
                kps.append(
                    Keypoint(
                        _finite(xy[0], f"{where}.joints[{j}][0]", source),
                        _finite(xy[1], f"{where}.joints[{j}][1]", source),
                        Visibility.VISIBLE,
                    )
                )
        center = _require(rec, "center", f"{where}.center", source)
        center = (_finite(center[0], f"{where}.center[0]", source), _finite(center[1], f"{where}.center[1]", source))
        scale = _finite(_require(rec, "scale", f"{where}.scale", source), f"{where}.scale", source)
        if scale <= 0:
            raise ParseError(f"scale must be positive, got {scale}", path=f"{where}.scale", source=source)
        image_name = str(_require(rec, "image", f"{where}.image", source))
        images.setdefault(image_name, ImageInfo(file_name=image_name))

        head_box = rec.get("headbox")
        if headboxes is not None and headboxes[i] is not None:
            head_box = headboxes[i]
        if head_box is not None:
            if len(head_box) != 4:
                raise ParseError("headbox must have 4 entries", path=f"{where}.headbox", source=source)
            head_box = tuple(_finite(v, f"{where}.headbox[{k}]", source) for k, v in enumerate(head_box))
        else:
            warnings.append(f"{where}: no head box; pose excluded from PCKh")

        bbox = _mpii_bbox(center, scale)
        side = scale * MPII_SCALE_UNIT
        annotations.append(
            PoseAnnotation(
                pose_id=str(rec["pose_id"]) if "pose_id" in rec else f"mpii_{i:06d}",
                image_id=image_name,
                keypoints=tuple(kps),
                bbox=bbox,
                area=side * side,
                head_box=head_box,
                center=center,
                scale=scale,
            )
        )

    return DatasetBundle(
        convention=MPII16,
        annotations=tuple(annotations),
        images=images,
        source_digest=digest,
        warnings=tuple(warnings),
    )


def parse_predictions(path: PathLike, convention: SkeletonConvention) -> PredictionSet:
    """Parse one model's prediction dump; unknown pose ids are kept as-is."""
    doc, _ = _load_json(path)
    source = str(path)
    model_id = str(_require(doc, "model_id", "model_id", source))
    file_conv = str(_require(doc, "convention", "convention", source))
    if file_conv != convention.name:
        raise ParseError(
            f"dump convention {file_conv!r} does not match requested {convention.name!r}",
            source=source,
        )
    poses = _require(doc, "poses", "poses", source)
    entries: dict[str, np.ndarray] = {}
    for i, rec in enumerate(poses):
        where = f"poses[{i}]"
        pose_id = str(_require(rec, "pose_id", f"{where}.pose_id", source))
        joints = _require(rec, "joints", f"{where}.joints", source)
        if len(joints) != convention.joint_count:
            raise ParseError(
                f"joints has length {len(joints)}, expected {convention.joint_count}",
                path=f"{where}.joints",
                source=source,
            )
        arr = np.empty((convention.joint_count, 3), dtype=np.float64)
        for j, triple in enumerate(joints):
            if len(triple) != 3:
                raise ParseError("joint entry must be [x, y, confidence]", path=f"{where}.joints[{j}]", source=source)
            arr[j, 0] = _finite(triple[0], f"{where}.joints[{j}][0]", source)
            arr[j, 1] = _finite(triple[1], f"{where}.joints[{j}][1]", source)
            c = _finite(triple[2], f"{where}.joints[{j}][2]", source)
            if not 0.0 <= c <= 1.0:
                raise ParseError(f"confidence {c} outside [0, 1]", path=f"{where}.joints[{j}][2]", source=source)
            arr[j, 2] = c
        if pose_id in entries:
            raise ParseError(f"duplicate pose_id {pose_id!r}", path=where, source=source)
        entries[pose_id] = arr
    try:
        return PredictionSet(model_id=model_id, convention=convention, entries=entries)
    except ValueError as exc:
        raise ParseError(str(exc), source=source) from exc


def _open_out(path: PathLike):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "wt", encoding="utf-8")
    return open(path, "w", encoding="utf-8")


def write_coco(bundle: DatasetBundle, path: PathLike) -> None:
    """Write a bundle back to COCO person-keypoints JSON (source-compatible)."""
    if bundle.convention is not COCO17:
        raise ValueError("write_coco requires a COCO17 bundle")
    out_images = [
        {"id": _maybe_int(img_id), "file_name": info.file_name, "width": info.width, "height": info.height}
        for img_id, info in bundle.images.items()
    ]
    out_anns = []
    for ann in bundle.annotations:
        flat: list[float] = []
        for kp in ann.keypoints:
            flat.extend([kp.x, kp.y, int(kp.visibility)])
        out_anns.append(
            {
                "id": _maybe_int(ann.pose_id),
                "image_id": _maybe_int(ann.image_id),
                "category_id": 1,
                "keypoints": flat,
                "num_keypoints": ann.num_labeled,
                "bbox": list(ann.bbox),
                "area": ann.area,
                "iscrowd": int(ann.iscrowd),
            }
        )
    doc = {
        "images": out_images,
        "annotations": out_anns,
        "categories": [
            {"id": 1, "name": "person", "keypoints": list(COCO17.joint_names)}
        ],
    }
    with _open_out(path) as fh:
        json.dump(doc, fh)


def write_mpii(bundle: DatasetBundle, path: PathLike) -> None:
    """Write a bundle back to converted-MPII JSON with inline head boxes."""
    if bundle.convention is not MPII16:
        raise ValueError("write_mpii requires an MPII16 bundle")
    out = []
    for ann in bundle.annotations:
        rec = {
            "pose_id": ann.pose_id,  # extra key; standard readers ignore it
            "joints": [[kp.x, kp.y] for kp in ann.keypoints],
            "joints_vis": [1 if kp.labeled else 0 for kp in ann.keypoints],
            "center": list(ann.center) if ann.center else [0.0, 0.0],
            "scale": ann.scale if ann.scale is not None else ann.bbox[2] / MPII_SCALE_UNIT,
            "image": bundle.images[ann.image_id].file_name,
        }
        if ann.head_box is not None:
            rec["headbox"] = list(ann.head_box)
        out.append(rec)
    with _open_out(path) as fh:
        json.dump(out, fh)


def write_predictions(pset: PredictionSet, path: PathLike) -> None:
    doc = {
        "model_id": pset.model_id,
        "convention": pset.convention.name,
        "poses": [
            {"pose_id": pose_id, "joints": arr.tolist()} for pose_id, arr in pset.entries.items()
        ],
    }
    with _open_out(path) as fh:
        json.dump(doc, fh)


def write_bundle(bundle: DatasetBundle, path: PathLike) -> None:
    """Write in the bundle's native annotation format."""
    if bundle.convention is COCO17:
        write_coco(bundle, path)
    else:
        write_mpii(bundle, path)


def _maybe_int(value: str):
    try:
        return int(value)
    except ValueError:
        return value


def file_digest(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
