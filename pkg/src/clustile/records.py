"""Dataset and detection records plus their COCO-style JSON form.

On disk, boxes follow the COCO convention [x, y, width, height]; in
memory everything is corner form (see geometry.Box). Conversion happens
only at the I/O boundary, and coordinates are written with at most six
fractional digits so that a save/load round trip is lossless for values
representable at that precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import ValidationError
from .geometry import Box, ImageExtent, contains

__all__ = [
    "GLOBAL_SOURCE",
    "Annotation",
    "Detection",
    "ImageRecord",
    "Cluster",
    "load_dataset",
    "save_dataset",
    "load_detections",
    "save_detections",
]

GLOBAL_SOURCE = "global"

# Serialized decimal precision for coordinates and scores.
_DIGITS = 6


@dataclass(frozen=True)
class Annotation:
    """Ground-truth object: a category box in the global frame."""

    box: Box
    category_id: int
    object_id: int

    def __post_init__(self) -> None:
        if self.category_id < 1:
            raise ValidationError(
                f"Annotation.category_id must be >= 1, got {self.category_id}"
            )


@dataclass(frozen=True)
class Detection:
    """Scored category box, either from the whole-image pass or a chip."""

    box: Box
    category_id: int
    score: float
    source: str = GLOBAL_SOURCE
    in_padded_region: bool = False

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"Detection.score must be in [0, 1], got {self.score}")
        if self.in_padded_region and self.source == GLOBAL_SOURCE:
            raise ValidationError(
                "Detection.in_padded_region requires a chip source, got source='global'"
            )


@dataclass(frozen=True)
class ImageRecord:
    """One image: its pixel extent and ground-truth annotations."""

    image_id: int
    extent: ImageExtent
    annotations: tuple[Annotation, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "annotations", tuple(self.annotations))
        bounds = self.extent.as_box()
        for ann in self.annotations:
            if not contains(bounds, ann.box):
                raise ValidationError(
                    f"annotation {ann.object_id} of image {self.image_id} "
                    f"exceeds the image extent"
                )


@dataclass(frozen=True)
class Cluster:
    """Candidate region expected to hold several objects.

    member_count is 0 when unknown (a bare proposal rather than a region
    built from known members).
    """

    box: Box
    score: float
    member_count: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValidationError(f"Cluster.score must be in [0, 1], got {self.score}")
        if self.member_count < 0:
            raise ValidationError(
                f"Cluster.member_count must be >= 0, got {self.member_count}"
            )


def _round(v: float) -> float:
    return round(float(v), _DIGITS)


def corners_to_xywh(b: Box) -> list[float]:
    return [_round(b.x_min), _round(b.y_min), _round(b.width), _round(b.height)]


def xywh_to_corners(bbox: Any, where: str) -> Box:
    if not (isinstance(bbox, (list, tuple)) and len(bbox) == 4):
        raise ValidationError(f"{where}: bbox must be a 4-element [x, y, w, h] list")
    x, y, w, h = (float(v) for v in bbox)
    if w <= 0 or h <= 0:
        raise ValidationError(f"{where}: bbox width/height must be positive")
    # Re-quantize the derived corners so x + w does not drift by one ulp
    # from the decimal value the file encodes.
    return Box(x, y, _round(x + w), _round(y + h))


def _read_json(path: str | Path) -> Any:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc


def _require(obj: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in obj:
        raise ValidationError(f"{where}: missing required field '{key}'")
    return obj[key]


def write_json_atomic(payload: Any, path: str | Path) -> None:
    """Write JSON with stable key order via a temp file plus rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    tmp.replace(path)


def load_dataset(path: str | Path) -> list[ImageRecord]:
    """Read a COCO-style dataset file into image records.

    Annotations are clipped to their image extent and ordered by
    (image_id, object_id); images are ordered by image_id.
    """
    data = _read_json(path)
    if not isinstance(data, Mapping):
        raise ValidationError(f"{path}: top level must be a JSON object")
    images = _require(data, "images", str(path))
    annotations = data.get("annotations", [])

    extents: dict[int, ImageExtent] = {}
    for i, img in enumerate(images):
        where = f"{path}: images[{i}]"
        image_id = int(_require(img, "id", where))
        if image_id in extents:
            raise ValidationError(f"{where}: duplicate image id {image_id}")
        extents[image_id] = ImageExtent(
            int(_require(img, "width", where)), int(_require(img, "height", where))
        )

    per_image: dict[int, list[Annotation]] = {image_id: [] for image_id in extents}
    for i, ann in enumerate(annotations):
        where = f"{path}: annotations[{i}]"
        image_id = int(_require(ann, "image_id", where))
        if image_id not in extents:
            raise ValidationError(f"{where}: unknown image_id {image_id}")
        box = xywh_to_corners(_require(ann, "bbox", where), where)
        clipped = _clip_or_reject(box, extents[image_id], where)
        per_image[image_id].append(
            Annotation(
                box=clipped,
                category_id=int(_require(ann, "category_id", where)),
                object_id=int(_require(ann, "id", where)),
            )
        )

    records = []
    for image_id in sorted(extents):
        anns = sorted(per_image[image_id], key=lambda a: a.object_id)
        records.append(ImageRecord(image_id, extents[image_id], tuple(anns)))
    return records


def _clip_or_reject(box: Box, extent: ImageExtent, where: str) -> Box:
    from .geometry import clip

    clipped = clip(box, extent)
    if clipped is None:
        raise ValidationError(f"{where}: bbox lies entirely outside the image")
    return clipped


def save_dataset(records: Iterable[ImageRecord], path: str | Path) -> None:
    """Write image records as a COCO-style dataset file."""
    records = sorted(records, key=lambda r: r.image_id)
    images = [
        {"id": r.image_id, "width": r.extent.width, "height": r.extent.height}
        for r in records
    ]
    annotations = []
    category_ids: set[int] = set()
    for r in records:
        for ann in sorted(r.annotations, key=lambda a: a.object_id):
            category_ids.add(ann.category_id)
            annotations.append(
                {
                    "id": ann.object_id,
                    "image_id": r.image_id,
                    "category_id": ann.category_id,
                    "bbox": corners_to_xywh(ann.box),
                    "area": _round(ann.box.width * ann.box.height),
                    "iscrowd": 0,
                }
            )
    categories = [{"id": c, "name": f"category_{c}"} for c in sorted(category_ids)]
    payload = {"images": images, "annotations": annotations, "categories": categories}
    write_json_atomic(payload, path)


def save_detections(dets: Mapping[int, Iterable[Detection]], path: str | Path) -> None:
    """Write per-image detections as a flat COCO results array.

    The optional "source" and "in_padded_region" extension fields are
    ignored by standard COCO tooling.
    """
    entries = []
    for image_id in sorted(dets):
        ordered = sorted(
            dets[image_id], key=lambda d: (-d.score, d.box.corners(), d.category_id)
        )
        for d in ordered:
            entry: dict[str, Any] = {
                "image_id": image_id,
                "category_id": d.category_id,
                "bbox": corners_to_xywh(d.box),
                "score": _round(d.score),
            }
            if d.source != GLOBAL_SOURCE:
                entry["source"] = d.source
            if d.in_padded_region:
                entry["in_padded_region"] = True
            entries.append(entry)
    write_json_atomic(entries, path)


def load_detections(path: str | Path) -> dict[int, list[Detection]]:
    """Read a COCO results array back into per-image detection lists."""
    data = _read_json(path)
    if not isinstance(data, list):
        raise ValidationError(f"{path}: detections file must be a JSON array")
    out: dict[int, list[Detection]] = {}
    for i, entry in enumerate(data):
        where = f"{path}: detections[{i}]"
        score = float(_require(entry, "score", where))
        if not (0.0 <= score <= 1.0):
            raise ValidationError(f"{where}: field 'score' must be in [0, 1], got {score}")
        det = Detection(
            box=xywh_to_corners(_require(entry, "bbox", where), where),
            category_id=int(_require(entry, "category_id", where)),
            score=score,
            source=str(entry.get("source", GLOBAL_SOURCE)),
            in_padded_region=bool(entry.get("in_padded_region", False)),
        )
        out.setdefault(int(_require(entry, "image_id", where)), []).append(det)
    return {
        image_id: sorted(
            out[image_id], key=lambda d: (-d.score, d.box.corners(), d.category_id)
        )
        for image_id in sorted(out)
    }
