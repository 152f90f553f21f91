"""COCO-style average precision, chip-type statistics, and chip counts.

AP follows the COCO protocol: greedy matching per image at each IoU
threshold (highest-IoU unmatched ground truth wins), 101-point
interpolated precision, averaged over thresholds then categories.
Size-bucket APs restrict both ground truth and detections to the
bucket before matching. Values that cannot be computed (no ground
truth in scope) are reported as None, never as 0.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .chip_planner import ChipPlan
from .errors import ValidationError
from .geometry import area, contains_point
from .records import Annotation, Detection, ImageRecord

__all__ = [
    "EvalParams",
    "EvalResult",
    "ChipTypeParams",
    "ChipTypeHistogram",
    "coco_ap",
    "chip_type_histogram",
    "count_forwarded",
    "text_table",
]

DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class EvalParams:
    """size_buckets holds the two side-length cutoffs (s, m): small is
    area < s^2, medium is s^2 <= area < m^2, large is area >= m^2."""

    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    size_buckets: tuple[float, float] = (32.0, 96.0)
    max_dets: int = 500
    recall_points: int = 101

    def __post_init__(self) -> None:
        ts = self.iou_thresholds
        if not ts or any(not 0 < t < 1 for t in ts):
            raise ValidationError("iou_thresholds must lie strictly inside (0, 1)")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError("iou_thresholds must be strictly increasing")
        s, m = self.size_buckets
        if not 0 < s < m:
            raise ValidationError(f"size_buckets must satisfy 0 < s < m, got {self.size_buckets}")
        if self.max_dets < 1 or self.recall_points < 2:
            raise ValidationError("max_dets must be >= 1 and recall_points >= 2")


@dataclass(frozen=True)
class EvalResult:
    ap: float | None
    ap50: float | None
    ap75: float | None
    ap_s: float | None
    ap_m: float | None
    ap_l: float | None
    per_category: Mapping[int, float | None]
    images_forwarded: int = 0

    def with_forwarded(self, count: int) -> "EvalResult":
        return replace(self, images_forwarded=count)

    def to_json(self) -> dict:
        def r(v: float | None) -> float | None:
            return None if v is None else round(v, 6)

        return {
            "ap": r(self.ap),
            "ap50": r(self.ap50),
            "ap75": r(self.ap75),
            "ap_s": r(self.ap_s),
            "ap_m": r(self.ap_m),
            "ap_l": r(self.ap_l),
            "per_category": {str(k): r(v) for k, v in sorted(self.per_category.items())},
            "images_forwarded": self.images_forwarded,
        }


def _det_sort_key(d: Detection) -> tuple:
    b = d.box
    return (-d.score, -area(b), b.x_min, b.y_min, b.x_max, b.y_max, d.category_id)


def _iou_matrix(dets: Sequence[Detection], gts: Sequence[Annotation]) -> np.ndarray:
    db = np.array([[d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max] for d in dets])
    gb = np.array([[g.box.x_min, g.box.y_min, g.box.x_max, g.box.y_max] for g in gts])
    ix = np.minimum(db[:, None, 2], gb[None, :, 2]) - np.maximum(db[:, None, 0], gb[None, :, 0])
    iy = np.minimum(db[:, None, 3], gb[None, :, 3]) - np.maximum(db[:, None, 1], gb[None, :, 1])
    inter = np.clip(ix, 0.0, None) * np.clip(iy, 0.0, None)
    da = (db[:, 2] - db[:, 0]) * (db[:, 3] - db[:, 1])
    ga = (gb[:, 2] - gb[:, 0]) * (gb[:, 3] - gb[:, 1])
    union = da[:, None] + ga[None, :] - inter
    return np.where(union > 0, inter / union, 0.0)


def _in_bucket(a: float, bucket: tuple[float, float] | None) -> bool:
    if bucket is None:
        return True
    lo, hi = bucket
    return lo <= a < hi


def _bucket_bounds(
    p: EvalParams, which: str | None
) -> tuple[float, float] | None:
    s, m = p.size_buckets
    if which is None:
        return None
    return {"s": (0.0, s * s), "m": (s * s, m * m), "l": (m * m, float("inf"))}[which]


class _CategoryData:
    """Per-(image, category) matching inputs, IoU matrix precomputed
    once and reused across thresholds."""

    def __init__(self) -> None:
        self.per_image: list[tuple[list[Detection], int, np.ndarray]] = []
        self.n_gt = 0

    def add(self, dets: list[Detection], gts: list[Annotation]) -> None:
        self.n_gt += len(gts)
        if dets and gts:
            self.per_image.append((dets, len(gts), _iou_matrix(dets, gts)))
        elif dets:
            self.per_image.append((dets, 0, np.zeros((len(dets), 0))))


def _ap_at_threshold(data: _CategoryData, t: float, recall_points: int) -> float:
    records: list[tuple[tuple, bool]] = []
    for dets, n_gt, ious in data.per_image:
        matched = [False] * n_gt
        for i, d in enumerate(dets):
            best_j, best_v = -1, 0.0
            for j in range(n_gt):
                if matched[j]:
                    continue
                v = ious[i, j]
                if v >= t and v > best_v:
                    best_v, best_j = v, j
            if best_j >= 0:
                matched[best_j] = True
                records.append((_det_sort_key(d), True))
            else:
                records.append((_det_sort_key(d), False))
    if data.n_gt == 0:
        raise ValidationError("category with no ground truth reached AP computation")
    if not records:
        return 0.0
    records.sort(key=lambda r: r[0])
    tp = np.cumsum([1.0 if hit else 0.0 for _, hit in records])
    n = len(records)
    recalls = tp / data.n_gt
    precisions = tp / np.arange(1, n + 1)
    envelope = np.maximum.accumulate(precisions[::-1])[::-1]
    points = np.linspace(0.0, 1.0, recall_points)
    idx = np.searchsorted(recalls, points, side="left")
    sampled = np.where(idx < n, envelope[np.minimum(idx, n - 1)], 0.0)
    return float(sampled.mean())


def _collect(
    dets_by_image: Mapping[int, Sequence[Detection]],
    images: Sequence[ImageRecord],
    p: EvalParams,
    bucket: tuple[float, float] | None,
) -> dict[int, _CategoryData]:
    by_category: dict[int, _CategoryData] = {}
    for image in images:
        image_dets = sorted(dets_by_image.get(image.image_id, []), key=_det_sort_key)
        image_dets = image_dets[: p.max_dets]
        gts_by_cat: dict[int, list[Annotation]] = {}
        for ann in image.annotations:
            if _in_bucket(area(ann.box), bucket):
                gts_by_cat.setdefault(ann.category_id, []).append(ann)
        dets_by_cat: dict[int, list[Detection]] = {}
        for d in image_dets:
            if _in_bucket(area(d.box), bucket):
                dets_by_cat.setdefault(d.category_id, []).append(d)
        for cat in set(gts_by_cat) | set(dets_by_cat):
            by_category.setdefault(cat, _CategoryData()).add(
                dets_by_cat.get(cat, []), gts_by_cat.get(cat, [])
            )
    return by_category


def _mean_ap(
    by_category: dict[int, _CategoryData],
    thresholds: Sequence[float],
    recall_points: int,
) -> tuple[float | None, dict[int, float]]:
    """Mean over categories (with ground truth) of the mean AP over
    thresholds; None when no category has ground truth."""
    per_cat: dict[int, float] = {}
    for cat, data in sorted(by_category.items()):
        if data.n_gt == 0:
            continue
        per_cat[cat] = float(
            np.mean([_ap_at_threshold(data, t, recall_points) for t in thresholds])
        )
    if not per_cat:
        return None, {}
    return float(np.mean(list(per_cat.values()))), per_cat


def coco_ap(
    dets_by_image: Mapping[int, Sequence[Detection]],
    images: Sequence[ImageRecord],
    p: EvalParams | None = None,
) -> EvalResult:
    """COCO-style AP over a batch of images.

    dets_by_image maps image_id to that image's detections (any order;
    a canonical score sort is applied). Per-image detections beyond
    max_dets are discarded before matching.
    """
    p = p or EvalParams()
    full = _collect(dets_by_image, images, p, None)
    ap, per_category = _mean_ap(full, p.iou_thresholds, p.recall_points)

    def single(t: float) -> float | None:
        if t not in p.iou_thresholds:
            return None
        return _mean_ap(full, [t], p.recall_points)[0]

    def bucket_ap(which: str) -> float | None:
        data = _collect(dets_by_image, images, p, _bucket_bounds(p, which))
        return _mean_ap(data, p.iou_thresholds, p.recall_points)[0]

    return EvalResult(
        ap=ap,
        ap50=single(0.5),
        ap75=single(0.75),
        ap_s=bucket_ap("s"),
        ap_m=bucket_ap("m"),
        ap_l=bucket_ap("l"),
        per_category=per_category,
    )


@dataclass(frozen=True)
class ChipTypeParams:
    """Object-count cutoffs: sparse is <= sparse_max objects (zero
    included), clustered is > common_max, common is in between."""

    sparse_max: int = 2
    common_max: int = 10

    def __post_init__(self) -> None:
        if not 0 <= self.sparse_max < self.common_max:
            raise ValidationError(
                f"need 0 <= sparse_max < common_max, got {self.sparse_max}, {self.common_max}"
            )


@dataclass(frozen=True)
class ChipTypeHistogram:
    total: int
    zero: int
    sparse: int
    common: int
    clustered: int

    @property
    def zero_fraction(self) -> float:
        return self.zero / self.total

    @property
    def sparse_fraction(self) -> float:
        return self.sparse / self.total

    @property
    def common_fraction(self) -> float:
        return self.common / self.total

    @property
    def clustered_fraction(self) -> float:
        return self.clustered / self.total

    def to_json(self) -> dict:
        return {
            "total": self.total,
            "zero": self.zero,
            "sparse": self.sparse,
            "common": self.common,
            "clustered": self.clustered,
            "zero_fraction": round(self.zero_fraction, 6),
            "sparse_fraction": round(self.sparse_fraction, 6),
            "common_fraction": round(self.common_fraction, 6),
            "clustered_fraction": round(self.clustered_fraction, 6),
        }


def chip_type_histogram(
    plans_by_image: Mapping[int, Sequence[ChipPlan]],
    images: Sequence[ImageRecord],
    p: ChipTypeParams | None = None,
) -> ChipTypeHistogram:
    """Sparse/common/clustered chip fractions over a batch. An object
    counts toward a chip when its center lies inside the chip crop."""
    p = p or ChipTypeParams()
    by_id = {img.image_id: img for img in images}
    total = zero = sparse = common = clustered = 0
    for image_id, plans in plans_by_image.items():
        if image_id not in by_id:
            raise ValidationError(f"plans reference unknown image {image_id}")
        anns = by_id[image_id].annotations
        centers = [a.box.center for a in anns]
        for chip in plans:
            n = sum(1 for c in centers if contains_point(chip.crop, *c))
            total += 1
            if n == 0:
                zero += 1
            if n <= p.sparse_max:
                sparse += 1
            elif n <= p.common_max:
                common += 1
            else:
                clustered += 1
    if total == 0:
        raise ValidationError("chip_type_histogram needs at least one chip")
    return ChipTypeHistogram(total, zero, sparse, common, clustered)


def count_forwarded(plans_by_image: Mapping[int, Sequence[ChipPlan]]) -> int:
    """Number of crops sent through the detector, global passes included."""
    return sum(len(plans) for plans in plans_by_image.values())


_COLUMNS = ("AP", "AP50", "AP75", "AP_s", "AP_m", "AP_l", "#img")


def _cell(v: float | None) -> str:
    return "n/a" if v is None else f"{100.0 * v:.1f}"


def text_table(results: Mapping[str, EvalResult]) -> str:
    """Aligned plain-text table, one row per strategy."""
    rows = []
    for name, r in results.items():
        rows.append(
            (name, *(_cell(v) for v in (r.ap, r.ap50, r.ap75, r.ap_s, r.ap_m, r.ap_l)),
             str(r.images_forwarded))
        )
    name_w = max(len("strategy"), *(len(r[0]) for r in rows)) if rows else len("strategy")
    widths = [max(len(h), *(len(r[i + 1]) for r in rows)) if rows else len(h)
              for i, h in enumerate(_COLUMNS)]
    lines = [
        "strategy".ljust(name_w) + "  " +
        "  ".join(h.rjust(w) for h, w in zip(_COLUMNS, widths))
    ]
    for r in rows:
        lines.append(
            r[0].ljust(name_w) + "  " +
            "  ".join(c.rjust(w) for c, w in zip(r[1:], widths))
        )
    return "\n".join(lines) + "\n"
