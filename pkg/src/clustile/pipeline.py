"""End-to-end strategy runners and the file formats between stages.

A strategy decides how an image becomes chips:

* global_only — one whole-image pass.
* eip — a uniform grid, no whole-image pass.
* clusdet — whole-image pass, detection-driven cluster proposals merged
  down to at most topn, per-cluster scale estimation, and
  scale-banded cluster chips.
* clusdet_no_scalenet — like clusdet but one raw chip per cluster, no
  scale-driven splitting or padding.

Planning for the clusdet strategies needs whole-image detections; the
planner runs the simulated detector on the global chip itself. The
detect stage later re-runs that chip and gets bit-identical results
(seeds derive from image and chip ids alone), which is what lets the
stages communicate only through files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .chip_planner import (
    GLOBAL_PASS,
    ChipPlan,
    PlannerParams,
    global_chip,
    plan_cluster_unscaled,
    plan_eip,
    plan_from_json,
    plan_pipeline,
    plan_to_json,
)
from .clustering import ProposalParams, propose_clusters
from .errors import ConfigError, ValidationError
from .fusion import FusionParams, fuse, remap
from .geometry import Box
from .merging import MergeParams, icm
from .records import (
    Cluster,
    Detection,
    ImageRecord,
    _read_json,
    _require,
    _round,
    corners_to_xywh,
    write_json_atomic,
    xywh_to_corners,
)
from .scale import build_estimator, estimate_scale
from .simulator import DetectorModel, simulate_detect

__all__ = [
    "STRATEGY_NAMES",
    "StrategySpec",
    "plan_image",
    "detect_plans",
    "fuse_image",
    "run_strategy",
    "save_plans",
    "load_plans",
    "save_chip_detections",
    "load_chip_detections",
]

STRATEGY_NAMES = ("global_only", "eip", "clusdet", "clusdet_no_scalenet")


@dataclass(frozen=True)
class StrategySpec:
    """Everything a strategy needs, with paper-calibrated defaults."""

    name: str = "clusdet"
    topn: int = 3
    tau_op: float = 0.7
    scale_range: tuple[float, float] = (70.0, 280.0)
    depth: int = 2
    rows: int = 2
    cols: int = 3
    overlap: float = 0.0
    estimator: str = "pass_through"
    estimator_model: str | None = None
    merge_gap: float = 64.0
    min_members: int = 3
    score_mode: str = "mean_member_score"
    detector_input: float = 600.0
    min_chip_side: float = 64.0

    def __post_init__(self) -> None:
        if self.name not in STRATEGY_NAMES:
            raise ConfigError(
                f"unknown strategy {self.name!r}; expected one of {', '.join(STRATEGY_NAMES)}"
            )
        if self.topn < 1:
            raise ConfigError(f"topn must be >= 1, got {self.topn}")

    @property
    def label(self) -> str:
        if self.name == "eip":
            return f"eip({self.rows}x{self.cols})"
        if self.name in ("clusdet", "clusdet_no_scalenet"):
            return f"{self.name}(topn={self.topn})"
        return self.name

    def planner_params(self) -> PlannerParams:
        return PlannerParams(
            detector_input=self.detector_input,
            scale_range=self.scale_range,
            max_partition_depth=self.depth,
            min_chip_side=self.min_chip_side,
        )

    def merge_params(self) -> MergeParams:
        return MergeParams(iou_threshold=self.tau_op, max_clusters=self.topn)

    def proposal_params(self) -> ProposalParams:
        return ProposalParams(
            merge_gap=self.merge_gap,
            min_members=self.min_members,
            score_mode=self.score_mode,
        )

    @classmethod
    def from_json(cls, payload: Mapping) -> "StrategySpec":
        kwargs = dict(payload)
        for key in ("scale_range",):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad strategy config: {exc}") from exc

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "topn": self.topn,
            "tau_op": self.tau_op,
            "scale_range": list(self.scale_range),
            "depth": self.depth,
            "rows": self.rows,
            "cols": self.cols,
            "overlap": self.overlap,
            "estimator": self.estimator,
            "estimator_model": self.estimator_model,
            "merge_gap": self.merge_gap,
            "min_members": self.min_members,
            "score_mode": self.score_mode,
            "detector_input": self.detector_input,
            "min_chip_side": self.min_chip_side,
        }


@dataclass(frozen=True)
class ImagePlan:
    """Outcome of the planning stage for one image."""

    image_id: int
    clusters: tuple[Cluster, ...]
    chips: tuple[ChipPlan, ...]


def plan_image(image: ImageRecord, spec: StrategySpec, model: DetectorModel) -> ImagePlan:
    """Clusters (possibly none) and chips for one image under a strategy."""
    pp = spec.planner_params()
    if spec.name == "global_only":
        return ImagePlan(image.image_id, (), (global_chip(image.extent, pp),))
    if spec.name == "eip":
        chips = plan_eip(
            image.extent, spec.rows, spec.cols, spec.overlap, spec.detector_input
        )
        return ImagePlan(image.image_id, (), tuple(chips))

    g = global_chip(image.extent, pp)
    global_dets = remap(simulate_detect(image, g, model), g)
    proposals = propose_clusters(global_dets, spec.proposal_params(), image.extent)
    clusters = icm(proposals, spec.merge_params())

    if spec.name == "clusdet_no_scalenet":
        chips = [g]
        for cid, cluster in enumerate(clusters):
            chips.extend(plan_cluster_unscaled(cluster, cid, pp, image.extent))
        return ImagePlan(image.image_id, tuple(clusters), tuple(chips))

    estimator = build_estimator(spec.estimator, spec.estimator_model)
    scales = [estimate_scale(c, global_dets, estimator, image) for c in clusters]
    chips = plan_pipeline(image, clusters, scales, pp)
    return ImagePlan(image.image_id, tuple(clusters), tuple(chips))


def detect_plans(
    image: ImageRecord, plan: ImagePlan, model: DetectorModel
) -> dict[str, list[Detection]]:
    """Chip-local detections for every chip of one image, keyed by chip id."""
    return {chip.chip_id: simulate_detect(image, chip, model) for chip in plan.chips}


def fuse_image(
    plan: ImagePlan,
    raw_by_chip: Mapping[str, Sequence[Detection]],
    p: FusionParams,
) -> list[Detection]:
    """Remap every chip's detections and fuse them into the final list."""
    global_dets: list[Detection] = []
    chip_dets: list[list[Detection]] = []
    for chip in plan.chips:
        if chip.chip_id not in raw_by_chip:
            raise ValidationError(
                f"image {plan.image_id}: missing detections for chip "
                f"{chip.chip_id!r}; the detections file does not match the plan"
            )
        mapped = remap(list(raw_by_chip[chip.chip_id]), chip, p.center_rule)
        if chip.provenance == GLOBAL_PASS:
            global_dets = mapped
        else:
            chip_dets.append(mapped)
    return fuse(global_dets, chip_dets, list(plan.clusters), p)


def run_strategy(
    images: Sequence[ImageRecord],
    spec: StrategySpec,
    model: DetectorModel,
    fusion: FusionParams | None = None,
) -> tuple[dict[int, ImagePlan], dict[int, list[Detection]]]:
    """In-memory pipeline over a batch: plans and fused detections per
    image. The CLI decomposes the same steps into file-driven stages."""
    fusion = fusion or FusionParams()
    plans: dict[int, ImagePlan] = {}
    finals: dict[int, list[Detection]] = {}
    for image in images:
        plan = plan_image(image, spec, model)
        raw = detect_plans(image, plan, model)
        plans[image.image_id] = plan
        finals[image.image_id] = fuse_image(plan, raw, fusion)
    return plans, finals


def _cluster_to_json(c: Cluster) -> dict:
    return {
        "box": [_round(v) for v in c.box.corners()],
        "score": _round(c.score),
        "member_count": c.member_count,
    }


def _cluster_from_json(payload: Mapping, where: str) -> Cluster:
    box = _require(payload, "box", where)
    return Cluster(
        box=Box(*(float(v) for v in box)),
        score=float(_require(payload, "score", where)),
        member_count=int(payload.get("member_count", 0)),
    )


def save_plans(plans: Mapping[int, ImagePlan], path: str | Path) -> None:
    payload = [
        {
            "image_id": image_id,
            "clusters": [_cluster_to_json(c) for c in plans[image_id].clusters],
            "chips": [plan_to_json(c) for c in plans[image_id].chips],
        }
        for image_id in sorted(plans)
    ]
    write_json_atomic(payload, path)


def load_plans(path: str | Path) -> dict[int, ImagePlan]:
    data = _read_json(path)
    if not isinstance(data, list):
        raise ValidationError(f"{path}: plan file must be a JSON array")
    out: dict[int, ImagePlan] = {}
    for i, entry in enumerate(data):
        where = f"{path}: plans[{i}]"
        image_id = int(_require(entry, "image_id", where))
        clusters = tuple(
            _cluster_from_json(c, where) for c in entry.get("clusters", [])
        )
        chips = tuple(plan_from_json(c) for c in _require(entry, "chips", where))
        out[image_id] = ImagePlan(image_id, clusters, chips)
    return out


def save_chip_detections(
    raw: Mapping[int, Mapping[str, Sequence[Detection]]], path: str | Path
) -> None:
    """Chip-local detections, one record per (image, chip)."""
    payload = []
    for image_id in sorted(raw):
        for chip_id in sorted(raw[image_id]):
            dets = sorted(
                raw[image_id][chip_id],
                key=lambda d: (-d.score, d.box.corners(), d.category_id),
            )
            payload.append(
                {
                    "image_id": image_id,
                    "chip_id": chip_id,
                    "detections": [
                        {
                            "bbox": corners_to_xywh(d.box),
                            "category_id": d.category_id,
                            "score": _round(d.score),
                        }
                        for d in dets
                    ],
                }
            )
    write_json_atomic(payload, path)


def load_chip_detections(path: str | Path) -> dict[int, dict[str, list[Detection]]]:
    data = _read_json(path)
    if not isinstance(data, list):
        raise ValidationError(f"{path}: chip detections file must be a JSON array")
    out: dict[int, dict[str, list[Detection]]] = {}
    for i, entry in enumerate(data):
        where = f"{path}: chip_detections[{i}]"
        image_id = int(_require(entry, "image_id", where))
        chip_id = str(_require(entry, "chip_id", where))
        dets = []
        for j, d in enumerate(_require(entry, "detections", where)):
            dwhere = f"{where}.detections[{j}]"
            dets.append(
                Detection(
                    box=xywh_to_corners(_require(d, "bbox", dwhere), dwhere),
                    category_id=int(_require(d, "category_id", dwhere)),
                    score=float(_require(d, "score", dwhere)),
                )
            )
        out.setdefault(image_id, {})[chip_id] = dets
    return out
