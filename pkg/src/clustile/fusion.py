"""Combining whole-image and chip detections into one final list.

Chip detections arrive in chip-local detector coordinates; remap puts
them back in the global frame and tags the ones centered in a chip's
padded margin. Fusion then drops padded-margin detections, removes
whole-image detections that fall inside a cluster (the cluster chip saw
those objects at higher resolution), and resolves duplicates with
per-category greedy NMS before truncating to a fixed budget.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .chip_planner import ChipPlan, in_padded_area
from .errors import ValidationError
from .geometry import Box, Transform, area, contains, strictly_contains_point, to_global
from .records import Cluster, Detection

__all__ = [
    "FusionParams",
    "remap",
    "filter_padded",
    "suppress_global",
    "nms",
    "fuse",
]


@dataclass(frozen=True)
class FusionParams:
    nms_iou: float = 0.5
    max_final: int = 500
    suppress_global_in_clusters: bool = True
    center_rule: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.nms_iou < 1:
            raise ValidationError(f"nms_iou must be in (0, 1), got {self.nms_iou}")
        if self.max_final < 1:
            raise ValidationError(f"max_final must be >= 1, got {self.max_final}")


def _det_key(d: Detection) -> tuple:
    """Total order: score desc, area desc, coordinates, category, source."""
    b = d.box
    return (
        -d.score,
        -area(b),
        b.x_min,
        b.y_min,
        b.x_max,
        b.y_max,
        d.category_id,
        d.source,
    )


def remap(
    dets: Sequence[Detection], plan: ChipPlan, center_rule: bool = True
) -> list[Detection]:
    """Chip-local detections mapped to the global frame.

    The chip was cropped at plan.crop and resized by plan.resize_factor,
    so the inverse is: divide by the factor, then offset by the crop
    origin. Detections that land in the chip's padded margin are tagged
    for later removal — by box center under the default rule, by whole
    box otherwise.
    """
    t = Transform(
        offset_x=plan.crop.x_min,
        offset_y=plan.crop.y_min,
        scale=1.0 / plan.resize_factor,
    )
    out = []
    for d in dets:
        gbox = to_global(d.box, t)
        if center_rule:
            padded = in_padded_area(plan, *gbox.center)
        else:
            padded = contains(plan.crop, gbox) and not contains(plan.content_region, gbox)
        out.append(
            Detection(
                box=gbox,
                category_id=d.category_id,
                score=d.score,
                source=plan.chip_id,
                in_padded_region=padded,
            )
        )
    return out


def filter_padded(dets: Iterable[Detection]) -> list[Detection]:
    """Everything not tagged as padded-margin."""
    return [d for d in dets if not d.in_padded_region]


def suppress_global(
    global_dets: Iterable[Detection],
    clusters: Sequence[Cluster],
    center_rule: bool = True,
) -> list[Detection]:
    """Whole-image detections inside any cluster box are removed; the
    cluster's own chip re-detects those objects. Membership is by box
    center (strictly interior) under the default rule, by whole box
    otherwise."""
    if not clusters:
        return list(global_dets)

    def inside(d: Detection, c: Cluster) -> bool:
        if center_rule:
            return strictly_contains_point(c.box, *d.box.center)
        return contains(c.box, d.box)

    return [d for d in global_dets if not any(inside(d, c) for c in clusters)]


def _iou_row(seed: Box, boxes: np.ndarray) -> np.ndarray:
    ix = np.minimum(seed.x_max, boxes[:, 2]) - np.maximum(seed.x_min, boxes[:, 0])
    iy = np.minimum(seed.y_max, boxes[:, 3]) - np.maximum(seed.y_min, boxes[:, 1])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    union = area(seed) + areas - inter
    return np.where(union > 0, inter / union, 0.0)


def nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy per-category suppression.

    Walk each category's detections by descending score; a detection is
    dropped when its IoU with an already-kept detection of the same
    category exceeds the threshold. Output keeps one global score-sorted
    order.
    """
    by_category: dict[int, list[Detection]] = {}
    for d in dets:
        by_category.setdefault(d.category_id, []).append(d)

    kept: list[Detection] = []
    for category in sorted(by_category):
        pool = sorted(by_category[category], key=_det_key)
        boxes = np.array(
            [[d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max] for d in pool]
        )
        alive = np.ones(len(pool), dtype=bool)
        for i, d in enumerate(pool):
            if not alive[i]:
                continue
            kept.append(d)
            rest = alive.copy()
            rest[: i + 1] = False
            idx = np.flatnonzero(rest)
            if idx.size:
                overlaps = _iou_row(d.box, boxes[idx])
                alive[idx[overlaps > iou_threshold]] = False
    return sorted(kept, key=_det_key)


def fuse(
    global_dets: Sequence[Detection],
    chip_dets_per_plan: Sequence[Sequence[Detection]],
    clusters: Sequence[Cluster],
    p: FusionParams,
) -> list[Detection]:
    """Final detections for one image.

    Inputs must already be in the global frame (chip detections through
    remap). Stages: drop padded-margin detections, suppress whole-image
    detections inside clusters, pool everything, per-category NMS, keep
    the max_final best by score.
    """
    pooled = filter_padded(d for per_plan in chip_dets_per_plan for d in per_plan)
    kept_global = list(global_dets)
    if p.suppress_global_in_clusters:
        kept_global = suppress_global(kept_global, clusters, p.center_rule)
    survivors = nms(kept_global + pooled, p.nms_iou)
    return survivors[: p.max_final]
