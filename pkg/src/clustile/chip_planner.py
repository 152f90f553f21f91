"""Turning clusters into concrete detector crops ("chips").

A chip is a crop of the source image that will be resized so its
shorter side matches the detector input. The planner keeps the
projected object scale of each chip inside a target band: crops whose
objects would come out too small are split in two (recursively, up to a
depth budget), crops whose objects would come out too large are grown
in place. A uniform-grid planner is included as the baseline that
cluster-aware planning is measured against.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

from .errors import ValidationError
from .geometry import Box, ImageExtent, clip, contains_point
from .records import Cluster, ImageRecord, _round

__all__ = [
    "DEFAULT_DETECTOR_INPUT",
    "DEFAULT_SCALE_RANGE",
    "PlannerParams",
    "ChipPlan",
    "projected_scale",
    "plan_cluster",
    "plan_cluster_unscaled",
    "global_chip",
    "plan_eip",
    "plan_pipeline",
    "plan_to_json",
    "plan_from_json",
    "in_padded_area",
]

logger = logging.getLogger(__name__)

DEFAULT_DETECTOR_INPUT = 600.0
DEFAULT_SCALE_RANGE = (70.0, 280.0)

GLOBAL_PASS = "global_pass"
CLUSTER = "cluster"
GRID = "grid"


@dataclass(frozen=True)
class PlannerParams:
    detector_input: float = DEFAULT_DETECTOR_INPUT
    scale_range: tuple[float, float] = DEFAULT_SCALE_RANGE
    max_partition_depth: int = 2
    min_chip_side: float = 64.0

    def __post_init__(self) -> None:
        lo, hi = self.scale_range
        if not 0 < lo < hi:
            raise ValidationError(f"scale_range must satisfy 0 < lo < hi, got {self.scale_range}")
        if self.detector_input <= 0:
            raise ValidationError(f"detector_input must be positive, got {self.detector_input}")
        if self.max_partition_depth < 0:
            raise ValidationError("max_partition_depth must be >= 0")
        if self.min_chip_side <= 0:
            raise ValidationError("min_chip_side must be positive")


@dataclass(frozen=True)
class ChipPlan:
    """One planned crop.

    content_region is the sub-area of the crop this chip is responsible
    for; detections centered outside it (in padding or grid overlap) are
    discarded during fusion. It equals the crop when nothing was added.
    projected_object_scale is only meaningful for cluster chips, where a
    per-cluster scale estimate exists.
    """

    crop: Box
    resize_factor: float
    provenance: str
    # Defaults to the crop itself in __post_init__; never None afterwards.
    content_region: Box = field(default=None)  # type: ignore[assignment]
    cluster_id: int | None = None
    partition_index: int | None = None
    grid_row: int | None = None
    grid_col: int | None = None
    projected_object_scale: float | None = None
    partition_depth: int = 0
    boundary_clipped: bool = False

    def __post_init__(self) -> None:
        if self.content_region is None:
            object.__setattr__(self, "content_region", self.crop)
        # comparisons of numpy-typed coordinates yield numpy bools, which
        # json.dumps rejects; normalize so plans always serialize
        object.__setattr__(self, "boundary_clipped", bool(self.boundary_clipped))
        if self.resize_factor <= 0:
            raise ValidationError(f"resize_factor must be positive, got {self.resize_factor}")
        if self.provenance == GLOBAL_PASS:
            ids: tuple = ()
        elif self.provenance == CLUSTER:
            ids = (self.cluster_id, self.partition_index)
        elif self.provenance == GRID:
            ids = (self.grid_row, self.grid_col)
        else:
            raise ValidationError(f"unknown provenance {self.provenance!r}")
        if any(i is None for i in ids):
            raise ValidationError(f"{self.provenance} chips need their index fields")
        cr = self.content_region
        if not (
            self.crop.x_min <= cr.x_min
            and self.crop.y_min <= cr.y_min
            and cr.x_max <= self.crop.x_max
            and cr.y_max <= self.crop.y_max
        ):
            raise ValidationError("content_region must lie within the crop")

    @property
    def chip_id(self) -> str:
        if self.provenance == GLOBAL_PASS:
            return "global"
        if self.provenance == CLUSTER:
            return f"cluster:{self.cluster_id}:{self.partition_index}"
        return f"grid:{self.grid_row}:{self.grid_col}"

    @property
    def has_padding(self) -> bool:
        return self.content_region != self.crop


def in_padded_area(chip: ChipPlan, x: float, y: float) -> bool:
    """True when (x, y) lies in the crop but outside the chip's own
    content region, i.e. in padding or grid overlap."""
    return contains_point(chip.crop, x, y) and not contains_point(chip.content_region, x, y)


def projected_scale(object_scale: float, crop: Box, detector_input: float) -> float:
    """Object scale after the crop is resized to the detector input size."""
    if object_scale <= 0 or detector_input <= 0:
        raise ValidationError("projected_scale needs positive inputs")
    return object_scale * detector_input / crop.shorter_side


def _split(region: Box) -> tuple[Box, Box]:
    """Two equal halves, cut perpendicular to the longer side."""
    if region.width >= region.height:
        mid = 0.5 * (region.x_min + region.x_max)
        return (
            Box(region.x_min, region.y_min, mid, region.y_max),
            Box(mid, region.y_min, region.x_max, region.y_max),
        )
    mid = 0.5 * (region.y_min + region.y_max)
    return (
        Box(region.x_min, region.y_min, region.x_max, mid),
        Box(region.x_min, mid, region.x_max, region.y_max),
    )


def _pad(region: Box, s_hat: float, p: PlannerParams, extent: ImageExtent) -> tuple[Box, bool]:
    """Grow the region about its center until the projected scale drops
    to the band maximum, clipping to the image. Returns (crop, whether
    the image boundary prevented reaching the target)."""
    hi = p.scale_range[1]
    target_shorter = s_hat * p.detector_input / hi
    factor = target_shorter / region.shorter_side
    cx, cy = region.center
    grown = Box(
        cx - 0.5 * factor * region.width,
        cy - 0.5 * factor * region.height,
        cx + 0.5 * factor * region.width,
        cy + 0.5 * factor * region.height,
    )
    crop = clip(grown, extent)
    if crop is None:  # unreachable: grown contains region, region is in extent
        raise ValidationError("padded crop fell outside the image")
    return crop, crop.shorter_side < target_shorter - 1e-9


def plan_cluster(
    cluster: Cluster,
    s_hat: float,
    p: PlannerParams,
    extent: ImageExtent,
    cluster_id: int = 0,
) -> list[ChipPlan]:
    """Chips covering one cluster, each within the scale band unless the
    depth budget or the image boundary got in the way.

    Degenerate clusters (shorter than min_chip_side after clipping to
    the image) produce no chips and a logged warning.
    """
    if s_hat <= 0:
        raise ValidationError(f"estimated scale must be positive, got {s_hat}")
    root = clip(cluster.box, extent)
    if root is None or min(root.width, root.height) < p.min_chip_side:
        logger.warning(
            "dropping degenerate cluster %s: shorter than %s px after clipping",
            cluster.box,
            p.min_chip_side,
        )
        return []

    lo, hi = p.scale_range
    leaves: list[tuple[Box, Box, int, bool]] = []  # (crop, content, depth, clipped)

    def recurse(region: Box, depth: int) -> None:
        proj = projected_scale(s_hat, region, p.detector_input)
        if proj < lo and depth < p.max_partition_depth:
            left, right = _split(region)
            recurse(left, depth + 1)
            recurse(right, depth + 1)
            return
        if proj > hi:
            crop, clipped_flag = _pad(region, s_hat, p, extent)
            leaves.append((crop, region, depth, clipped_flag))
        else:
            leaves.append((region, region, depth, False))

    recurse(root, 0)
    return [
        ChipPlan(
            crop=crop,
            resize_factor=p.detector_input / crop.shorter_side,
            provenance=CLUSTER,
            content_region=content,
            cluster_id=cluster_id,
            partition_index=i,
            projected_object_scale=projected_scale(s_hat, crop, p.detector_input),
            partition_depth=depth,
            boundary_clipped=clipped_flag,
        )
        for i, (crop, content, depth, clipped_flag) in enumerate(leaves)
    ]


def plan_cluster_unscaled(
    cluster: Cluster, cluster_id: int, p: PlannerParams, extent: ImageExtent
) -> list[ChipPlan]:
    """One chip per cluster with no scale-driven splitting or padding;
    the ablation where the scale estimator is switched off."""
    root = clip(cluster.box, extent)
    if root is None or min(root.width, root.height) < p.min_chip_side:
        logger.warning(
            "dropping degenerate cluster %s: shorter than %s px after clipping",
            cluster.box,
            p.min_chip_side,
        )
        return []
    return [
        ChipPlan(
            crop=root,
            resize_factor=p.detector_input / root.shorter_side,
            provenance=CLUSTER,
            cluster_id=cluster_id,
            partition_index=0,
        )
    ]


def global_chip(extent: ImageExtent, p: PlannerParams) -> ChipPlan:
    """The whole-image pass every strategy except the grid baseline runs."""
    crop = extent.as_box()
    return ChipPlan(
        crop=crop,
        resize_factor=p.detector_input / crop.shorter_side,
        provenance=GLOBAL_PASS,
    )


def plan_eip(
    extent: ImageExtent,
    rows: int,
    cols: int,
    overlap: float = 0.0,
    detector_input: float = DEFAULT_DETECTOR_INPUT,
) -> list[ChipPlan]:
    """Uniform rows x cols grid. Cells tile the image; each crop extends
    half the overlap past its cell on every interior edge, and the cell
    stays the chip's content region so seam detections are counted once."""
    if rows < 1 or cols < 1:
        raise ValidationError("grid needs at least one row and one column")
    if overlap < 0:
        raise ValidationError("overlap must be non-negative")
    chips = []
    for r in range(rows):
        for c in range(cols):
            cell = Box(
                c * extent.width / cols,
                r * extent.height / rows,
                (c + 1) * extent.width / cols,
                (r + 1) * extent.height / rows,
            )
            grown = Box(
                cell.x_min - overlap / 2,
                cell.y_min - overlap / 2,
                cell.x_max + overlap / 2,
                cell.y_max + overlap / 2,
            )
            crop = clip(grown, extent)
            assert crop is not None
            chips.append(
                ChipPlan(
                    crop=crop,
                    resize_factor=detector_input / crop.shorter_side,
                    provenance=GRID,
                    content_region=cell,
                    grid_row=r,
                    grid_col=c,
                )
            )
    return chips


def plan_pipeline(
    image: ImageRecord,
    clusters: Sequence[Cluster],
    scales: Sequence[float],
    p: PlannerParams,
) -> list[ChipPlan]:
    """Full per-image plan: the global pass followed by every cluster's
    chips. Cluster ids in chip provenance are list positions."""
    if len(clusters) != len(scales):
        raise ValidationError(
            f"got {len(clusters)} clusters but {len(scales)} scale estimates"
        )
    plans = [global_chip(image.extent, p)]
    for cid, (cluster, s_hat) in enumerate(zip(clusters, scales)):
        plans.extend(plan_cluster(cluster, s_hat, p, image.extent, cluster_id=cid))
    return plans


def plan_to_json(chip: ChipPlan) -> dict:
    """Serializable form of one chip; coordinates as corner lists,
    decimals fixed so identical plans serialize identically."""
    payload: dict = {
        "provenance": chip.provenance,
        "crop": [_round(v) for v in chip.crop.corners()],
        "resize_factor": _round(chip.resize_factor),
        "partition_depth": chip.partition_depth,
        "boundary_clipped": chip.boundary_clipped,
    }
    if chip.has_padding:
        payload["content_region"] = [_round(v) for v in chip.content_region.corners()]
    if chip.projected_object_scale is not None:
        payload["projected_object_scale"] = _round(chip.projected_object_scale)
    if chip.provenance == CLUSTER:
        payload["cluster_id"] = chip.cluster_id
        payload["partition_index"] = chip.partition_index
    elif chip.provenance == GRID:
        payload["grid_row"] = chip.grid_row
        payload["grid_col"] = chip.grid_col
    return payload


def plan_from_json(payload: dict) -> ChipPlan:
    """Inverse of plan_to_json. The content region is re-intersected
    with the crop: decimal rounding may push a shared edge a hair past
    the crop's, and the constructor rejects that."""
    try:
        crop = Box(*(float(v) for v in payload["crop"]))
        content = crop
        if "content_region" in payload:
            raw = Box(*(float(v) for v in payload["content_region"]))
            content = Box(
                max(raw.x_min, crop.x_min),
                max(raw.y_min, crop.y_min),
                min(raw.x_max, crop.x_max),
                min(raw.y_max, crop.y_max),
            )
        return ChipPlan(
            crop=crop,
            resize_factor=float(payload["resize_factor"]),
            provenance=payload["provenance"],
            content_region=content,
            cluster_id=payload.get("cluster_id"),
            partition_index=payload.get("partition_index"),
            grid_row=payload.get("grid_row"),
            grid_col=payload.get("grid_col"),
            projected_object_scale=payload.get("projected_object_scale"),
            partition_depth=payload.get("partition_depth", 0),
            boundary_clipped=payload.get("boundary_clipped", False),
        )
    except KeyError as exc:
        raise ValidationError(f"chip plan is missing field {exc}") from exc
