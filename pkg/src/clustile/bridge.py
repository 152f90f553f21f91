"""Line-oriented JSON service exposing the core to foreign callers.

Run as ``python -m clustile.bridge``. Each stdin line is one request,
each stdout line the matching response; requests are independent and
hold no state between them, so callers may pipeline freely:

    {"id": 1, "op": "icm", "args": {"boxes": [...], "scores": [...],
                                     "tau": 0.7, "n_max": 3}}
    {"id": 1, "ok": true, "result": {"boxes": [...], "scores": [...]}}

Payloads are flat parallel arrays — boxes travel as 4N corner
coordinates [x1, y1, x2, y2, ...] — so a caller never constructs this
package's record types. Responses reuse the same convention. Numbers
cross the pipe bit-exactly: both sides emit shortest round-trip
decimals and parse correctly rounded, which is what makes results
byte-comparable with in-process calls. Nothing is rounded here (file
writers quantize; this service does not).

Operations:

    version  -> the core package version (clients pin against it)
    icm      -> merge overlapping scored boxes (merging.icm)
    plan     -> whole-image detections to a chip plan: group, merge,
                estimate per-cluster scale, plan chips (the same
                composition the clusdet pipeline strategy runs)
    fuse     -> chip-local detections + the plan back to fused global
                detections (pipeline.fuse_image)
    eval     -> detections + ground truth to COCO-style metrics
                (evaluation.coco_ap), floats at full precision

Errors come back as ``{"ok": false, "error": {"type", "message",
"index"}}``; index points at the offending array element when there is
one (non-finite value, bad box row) and is null otherwise. A malformed
request line yields an error response with id null rather than killing
the service.
"""

from __future__ import annotations

import json
import math
import sys
from typing import Any, Callable, Mapping, Sequence

from . import __version__
from .chip_planner import (
    CLUSTER,
    GLOBAL_PASS,
    GRID,
    ChipPlan,
    PlannerParams,
    plan_pipeline,
)
from .clustering import ProposalParams, propose_clusters
from .errors import ClustileError, ValidationError
from .evaluation import EvalParams, coco_ap
from .fusion import FusionParams
from .geometry import Box, ImageExtent
from .merging import MergeParams, icm
from .pipeline import ImagePlan, fuse_image
from .records import Annotation, Cluster, Detection, ImageRecord
from .scale import build_estimator, estimate_scale

__all__ = ["BridgeError", "handle", "serve", "main"]

# Wire codes for chip provenance, in flat plan arrays.
KIND_CODES = {GLOBAL_PASS: 0, CLUSTER: 1, GRID: 2}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}

# Wire sentinel for "no value" in otherwise-positive float arrays.
NONE_SENTINEL = -1.0


class BridgeError(ClustileError):
    """A request payload violates the wire contract.

    index is the offending element's position in the named array, when
    a single element is to blame; None for shape-level problems.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


# ------------------------------------------------------------ validation


def _require(args: Mapping, key: str) -> Any:
    if key not in args:
        raise BridgeError(f"missing required field {key!r}")
    return args[key]


def _section(args: Mapping, key: str) -> Mapping:
    value = _require(args, key)
    if not isinstance(value, Mapping):
        raise BridgeError(f"{key} must be an object")
    return value


def _floats(name: str, raw: Any, count: int | None = None) -> list[float]:
    if not isinstance(raw, Sequence) or isinstance(raw, (str, bytes)):
        raise BridgeError(f"{name} must be an array of numbers")
    if count is not None and len(raw) != count:
        raise BridgeError(f"{name} must hold {count} values, got {len(raw)}")
    out = []
    for i, v in enumerate(raw):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise BridgeError(f"{name}[{i}] is not a number", index=i)
        f = float(v)
        if not math.isfinite(f):
            raise BridgeError(f"{name}[{i}] is not finite", index=i)
        out.append(f)
    return out


def _ints(name: str, raw: Any, count: int | None = None) -> list[int]:
    values = _floats(name, raw, count)
    out = []
    for i, f in enumerate(values):
        if f != int(f):
            raise BridgeError(f"{name}[{i}] must be an integer, got {f}", index=i)
        out.append(int(f))
    return out


def _boxes(name: str, raw: Any, count: int | None = None) -> list[Box]:
    flat = _floats(name, raw)
    if len(flat) % 4:
        raise BridgeError(f"{name} length must be a multiple of 4, got {len(flat)}")
    n = len(flat) // 4
    if count is not None and n != count:
        raise BridgeError(f"{name} must hold {count} boxes, got {n}")
    out = []
    for i in range(n):
        x1, y1, x2, y2 = flat[4 * i : 4 * i + 4]
        try:
            out.append(Box(x1, y1, x2, y2))
        except ValidationError as exc:
            raise BridgeError(f"{name} box {i}: {exc}", index=i) from exc
    return out


def _extent(raw: Any) -> ImageExtent:
    w, h = _ints("image_size", raw, 2)
    return ImageExtent(w, h)


def _flat(boxes: Sequence[Box]) -> list[float]:
    out: list[float] = []
    for b in boxes:
        out.extend(b.corners())
    return out


# ------------------------------------------------------------ operations


def _op_version(args: Mapping) -> dict:
    return {"version": __version__}


def _op_icm(args: Mapping) -> dict:
    boxes = _boxes("boxes", _require(args, "boxes"))
    scores = _floats("scores", _require(args, "scores"), len(boxes))
    tau = float(_require(args, "tau"))
    n_max = int(_require(args, "n_max"))
    clusters = [Cluster(box=b, score=s) for b, s in zip(boxes, scores)]
    merged = icm(clusters, MergeParams(iou_threshold=tau, max_clusters=n_max))
    return {
        "boxes": _flat([c.box for c in merged]),
        "scores": [c.score for c in merged],
    }


def _plan_params(raw: Mapping) -> tuple[ProposalParams, MergeParams, PlannerParams]:
    lo, hi = _floats("params.scale_range", raw.get("scale_range", [70.0, 280.0]), 2)
    return (
        ProposalParams(
            merge_gap=float(raw.get("merge_gap", 64.0)),
            min_members=int(raw.get("min_members", 3)),
            score_mode=str(raw.get("score_mode", "mean_member_score")),
        ),
        MergeParams(
            iou_threshold=float(raw.get("tau", 0.7)),
            max_clusters=int(raw.get("topn", 3)),
        ),
        PlannerParams(
            detector_input=float(raw.get("detector_input", 600.0)),
            scale_range=(lo, hi),
            max_partition_depth=int(raw.get("depth", 2)),
            min_chip_side=float(raw.get("min_chip_side", 64.0)),
        ),
    )


def _chips_payload(chips: Sequence[ChipPlan]) -> dict:
    def opt_int(v: int | None) -> int:
        return -1 if v is None else v

    return {
        "crops": _flat([c.crop for c in chips]),
        "content_regions": _flat([c.content_region for c in chips]),
        "resize_factors": [c.resize_factor for c in chips],
        "kinds": [KIND_CODES[c.provenance] for c in chips],
        "cluster_ids": [opt_int(c.cluster_id) for c in chips],
        "partition_indices": [opt_int(c.partition_index) for c in chips],
        "grid_rows": [opt_int(c.grid_row) for c in chips],
        "grid_cols": [opt_int(c.grid_col) for c in chips],
        "projected_scales": [
            NONE_SENTINEL if c.projected_object_scale is None else c.projected_object_scale
            for c in chips
        ],
        "partition_depths": [c.partition_depth for c in chips],
        "boundary_clipped": [int(c.boundary_clipped) for c in chips],
    }


def _clusters_payload(clusters: Sequence[Cluster]) -> dict:
    return {
        "boxes": _flat([c.box for c in clusters]),
        "scores": [c.score for c in clusters],
        "member_counts": [c.member_count for c in clusters],
    }


def _op_plan(args: Mapping) -> dict:
    boxes = _boxes("boxes", _require(args, "boxes"))
    scores = _floats("scores", _require(args, "scores"), len(boxes))
    extent = _extent(_require(args, "image_size"))
    params_raw = args.get("params", {})
    if not isinstance(params_raw, Mapping):
        raise BridgeError("params must be an object")
    proposal_p, merge_p, planner_p = _plan_params(params_raw)
    # Planning is category-blind, so external detections need no
    # category array; a constant id satisfies the record type.
    dets = [
        Detection(box=b, category_id=1, score=s) for b, s in zip(boxes, scores)
    ]
    image = ImageRecord(image_id=0, extent=extent)
    proposals = propose_clusters(dets, proposal_p, extent)
    clusters = icm(proposals, merge_p)
    estimator = build_estimator("pass_through")
    scales = [estimate_scale(c, dets, estimator, image) for c in clusters]
    chips = plan_pipeline(image, clusters, scales, planner_p)
    return {
        "chips": _chips_payload(chips),
        "clusters": _clusters_payload(clusters),
    }


def _chips_from_payload(raw: Mapping) -> list[ChipPlan]:
    resize = _floats("plan.chips.resize_factors", _require(raw, "resize_factors"))
    n = len(resize)
    crops = _boxes("plan.chips.crops", _require(raw, "crops"), n)
    regions = _boxes("plan.chips.content_regions", _require(raw, "content_regions"), n)
    kinds = _ints("plan.chips.kinds", _require(raw, "kinds"), n)
    cluster_ids = _ints("plan.chips.cluster_ids", _require(raw, "cluster_ids"), n)
    part_idx = _ints("plan.chips.partition_indices", _require(raw, "partition_indices"), n)
    grid_rows = _ints("plan.chips.grid_rows", _require(raw, "grid_rows"), n)
    grid_cols = _ints("plan.chips.grid_cols", _require(raw, "grid_cols"), n)
    projected = _floats("plan.chips.projected_scales", _require(raw, "projected_scales"), n)
    depths = _ints("plan.chips.partition_depths", _require(raw, "partition_depths"), n)
    clipped = _ints("plan.chips.boundary_clipped", _require(raw, "boundary_clipped"), n)

    def opt(v: int) -> int | None:
        return None if v < 0 else v

    chips = []
    for i in range(n):
        if kinds[i] not in KIND_NAMES:
            raise BridgeError(f"plan.chips.kinds[{i}]: unknown code {kinds[i]}", index=i)
        try:
            chips.append(
                ChipPlan(
                    crop=crops[i],
                    resize_factor=resize[i],
                    provenance=KIND_NAMES[kinds[i]],
                    content_region=regions[i],
                    cluster_id=opt(cluster_ids[i]),
                    partition_index=opt(part_idx[i]),
                    grid_row=opt(grid_rows[i]),
                    grid_col=opt(grid_cols[i]),
                    projected_object_scale=(
                        None if projected[i] < 0 else projected[i]
                    ),
                    partition_depth=depths[i],
                    boundary_clipped=bool(clipped[i]),
                )
            )
        except ValidationError as exc:
            raise BridgeError(f"plan.chips row {i}: {exc}", index=i) from exc
    return chips


def _clusters_from_payload(raw: Mapping) -> list[Cluster]:
    scores = _floats("plan.clusters.scores", _require(raw, "scores"))
    boxes = _boxes("plan.clusters.boxes", _require(raw, "boxes"), len(scores))
    counts = _ints("plan.clusters.member_counts", _require(raw, "member_counts"), len(scores))
    return [
        Cluster(box=b, score=s, member_count=m)
        for b, s, m in zip(boxes, scores, counts)
    ]


def _detections(prefix: str, raw: Mapping) -> list[Detection]:
    scores = _floats(f"{prefix}.scores", _require(raw, "scores"))
    boxes = _boxes(f"{prefix}.boxes", _require(raw, "boxes"), len(scores))
    categories = _ints(f"{prefix}.categories", _require(raw, "categories"), len(scores))
    return [
        Detection(box=b, category_id=c, score=s)
        for b, s, c in zip(boxes, scores, categories)
    ]


def _op_fuse(args: Mapping) -> dict:
    plan_raw = _section(args, "plan")
    chips = _chips_from_payload(_section(plan_raw, "chips"))
    clusters = _clusters_from_payload(_section(plan_raw, "clusters"))
    global_dets = _detections("global", _section(args, "global"))
    chips_raw = _section(args, "chips")
    chip_dets = _detections("chips", chips_raw)
    chip_index = _ints("chips.chip_index", _require(chips_raw, "chip_index"), len(chip_dets))

    params_raw = args.get("params", {})
    if not isinstance(params_raw, Mapping):
        raise BridgeError("params must be an object")
    fusion_p = FusionParams(
        nms_iou=float(params_raw.get("nms_iou", 0.5)),
        max_final=int(params_raw.get("max_final", 500)),
        suppress_global_in_clusters=bool(
            params_raw.get("suppress_global_in_clusters", True)
        ),
        center_rule=bool(params_raw.get("center_rule", True)),
    )

    raw_by_chip: dict[str, list[Detection]] = {c.chip_id: [] for c in chips}
    global_rows = [c for c in chips if c.provenance == GLOBAL_PASS]
    if global_dets and not global_rows:
        raise BridgeError(
            "global detections were given but the plan has no whole-image chip"
        )
    if global_rows:
        raw_by_chip[global_rows[0].chip_id].extend(global_dets)
    for i, (det, idx) in enumerate(zip(chip_dets, chip_index)):
        if not 0 <= idx < len(chips):
            raise BridgeError(
                f"chips.chip_index[{i}] = {idx} is outside the plan "
                f"({len(chips)} chips)",
                index=i,
            )
        if chips[idx].provenance == GLOBAL_PASS:
            raise BridgeError(
                f"chips.chip_index[{i}] points at the whole-image chip; "
                "pass those detections in the global arrays",
                index=i,
            )
        raw_by_chip[chips[idx].chip_id].append(det)

    plan = ImagePlan(image_id=0, clusters=tuple(clusters), chips=tuple(chips))
    final = fuse_image(plan, raw_by_chip, fusion_p)
    return {
        "boxes": _flat([d.box for d in final]),
        "scores": [d.score for d in final],
        "categories": [d.category_id for d in final],
    }


def _op_eval(args: Mapping) -> dict:
    det_raw = _section(args, "detections")
    det_images = _ints("detections.image_ids", _require(det_raw, "image_ids"))
    dets = _detections("detections", det_raw)
    if len(det_images) != len(dets):
        raise BridgeError(
            f"detections.image_ids must hold {len(dets)} values, got {len(det_images)}"
        )

    gt_raw = _section(args, "ground_truth")
    gt_images = _ints("ground_truth.image_ids", _require(gt_raw, "image_ids"))
    gt_cats = _ints("ground_truth.categories", _require(gt_raw, "categories"), len(gt_images))
    gt_boxes = _boxes("ground_truth.boxes", _require(gt_raw, "boxes"), len(gt_images))

    img_raw = _section(args, "images")
    img_ids = _ints("images.ids", _require(img_raw, "ids"))
    widths = _ints("images.widths", _require(img_raw, "widths"), len(img_ids))
    heights = _ints("images.heights", _require(img_raw, "heights"), len(img_ids))

    anns_by_image: dict[int, list[Annotation]] = {i: [] for i in img_ids}
    for i, (image_id, box, cat) in enumerate(zip(gt_images, gt_boxes, gt_cats)):
        if image_id not in anns_by_image:
            raise BridgeError(
                f"ground_truth.image_ids[{i}] = {image_id} is not in images.ids",
                index=i,
            )
        anns_by_image[image_id].append(
            Annotation(box=box, category_id=cat, object_id=i + 1)
        )

    images = []
    for image_id, w, h in zip(img_ids, widths, heights):
        try:
            images.append(
                ImageRecord(
                    image_id=image_id,
                    extent=ImageExtent(w, h),
                    annotations=tuple(anns_by_image[image_id]),
                )
            )
        except ValidationError as exc:
            raise BridgeError(f"image {image_id}: {exc}") from exc

    dets_by_image: dict[int, list[Detection]] = {i: [] for i in img_ids}
    for i, (image_id, det) in enumerate(zip(det_images, dets)):
        if image_id not in dets_by_image:
            raise BridgeError(
                f"detections.image_ids[{i}] = {image_id} is not in images.ids",
                index=i,
            )
        dets_by_image[image_id].append(det)

    params_raw = args.get("params", {})
    if not isinstance(params_raw, Mapping):
        raise BridgeError("params must be an object")
    kwargs: dict[str, Any] = {}
    if "iou_thresholds" in params_raw:
        kwargs["iou_thresholds"] = tuple(params_raw["iou_thresholds"])
    if "size_buckets" in params_raw:
        kwargs["size_buckets"] = tuple(params_raw["size_buckets"])
    if "max_dets" in params_raw:
        kwargs["max_dets"] = int(params_raw["max_dets"])
    if "recall_points" in params_raw:
        kwargs["recall_points"] = int(params_raw["recall_points"])
    result = coco_ap(dets_by_image, images, EvalParams(**kwargs))

    # Full precision on purpose: EvalResult.to_json rounds for files,
    # which would break bit-exact comparison with in-process results.
    return {
        "ap": result.ap,
        "ap50": result.ap50,
        "ap75": result.ap75,
        "ap_s": result.ap_s,
        "ap_m": result.ap_m,
        "ap_l": result.ap_l,
        "per_category": {str(k): v for k, v in sorted(result.per_category.items())},
        "images_forwarded": result.images_forwarded,
    }


_OPS: dict[str, Callable[[Mapping], dict]] = {
    "version": _op_version,
    "icm": _op_icm,
    "plan": _op_plan,
    "fuse": _op_fuse,
    "eval": _op_eval,
}


# --------------------------------------------------------------- service


def handle(request: Any) -> dict:
    """One request to one response dict; never raises."""
    request_id = request.get("id") if isinstance(request, Mapping) else None
    try:
        if not isinstance(request, Mapping):
            raise BridgeError("request must be a JSON object")
        op = request.get("op")
        if op not in _OPS:
            known = ", ".join(sorted(_OPS))
            raise BridgeError(f"unknown op {op!r}; expected one of {known}")
        args = request.get("args", {})
        if not isinstance(args, Mapping):
            raise BridgeError("args must be an object")
        result = _OPS[op](args)
    except ClustileError as exc:
        return {
            "id": request_id,
            "ok": False,
            "error": {
                "type": type(exc).__name__,
                "message": str(exc),
                "index": getattr(exc, "index", None),
            },
        }
    except Exception as exc:  # bad scalar types and similar; keep serving
        return {
            "id": request_id,
            "ok": False,
            "error": {"type": type(exc).__name__, "message": str(exc), "index": None},
        }
    return {"id": request_id, "ok": True, "result": result}


def serve(stdin=None, stdout=None) -> None:
    """Serve requests line by line until EOF."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            response = {
                "id": None,
                "ok": False,
                "error": {
                    "type": "BridgeError",
                    "message": f"malformed JSON request: {exc.msg}",
                    "index": None,
                },
            }
        else:
            response = handle(request)
        stdout.write(json.dumps(response, sort_keys=True) + "\n")
        stdout.flush()


def main() -> int:
    serve()
    return 0


if __name__ == "__main__":
    sys.exit(main())
