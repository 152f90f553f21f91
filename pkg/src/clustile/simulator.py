"""Synthetic clustered scenes and a size-sensitive detector stand-in.

Scenes place most objects in Gaussian blobs around a few cluster
centers, with a sprinkling of uniform background objects — the object
layout that motivates cluster-aware chip planning. The simulated
detector never looks at pixels: it detects each visible ground-truth
box with a probability read off a piecewise-linear recall curve over
the object's size in detector-input space, jitters the box, and adds
false positives. Everything is reproducible:

* PRNG: numpy's PCG64 (``numpy.random.Generator``), a fixed, documented
  algorithm, so identical configs give identical results on any
  platform running the same numpy major line.
* Scene streams are seeded with ``SeedSequence([scene_seed, image_id])``.
* Detector streams are seeded with
  ``SeedSequence([detector_seed, image_id, chip_key(chip_id)])`` where
  ``chip_key`` is the first 8 bytes (little-endian) of the SHA-256 of
  the chip id string. Chips therefore draw independent, reproducible
  streams regardless of planning order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .chip_planner import ChipPlan
from .errors import ConfigError, ValidationError
from .geometry import Box, ImageExtent, Transform, area, clip, intersection_area, to_local
from .records import Annotation, Detection, ImageRecord
from .scale import object_scale

__all__ = [
    "SceneParams",
    "DetectorModel",
    "SceneLayout",
    "chip_key",
    "scene_rng",
    "detector_rng",
    "generate_scene",
    "generate_scene_with_layout",
    "generate_batch",
    "simulate_detect",
]


def chip_key(chip_id: str) -> int:
    """Stable 64-bit key for a chip id, used in seed derivation."""
    return int.from_bytes(hashlib.sha256(chip_id.encode("utf-8")).digest()[:8], "little")


def scene_rng(seed: int, image_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, image_id])))


def detector_rng(seed: int, image_id: int, chip_id: str) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, image_id, chip_key(chip_id)]))
    )


def _check_seed(seed: int) -> None:
    if seed < 0:
        raise ValidationError(f"seeds must be non-negative, got {seed}")


@dataclass(frozen=True)
class SceneParams:
    """Layout of one synthetic image.

    object_scale_dist is (median pixels, sigma) of a log-normal over
    sqrt(box area); aspect_sigma is the log-normal spread of the
    width/height ratio around square.
    """

    extent: ImageExtent
    n_clusters: int = 4
    objects_per_cluster: tuple[int, int] = (10, 25)
    cluster_spread: float = 120.0
    background_objects: int = 8
    object_scale_dist: tuple[float, float] = (28.0, 0.6)
    categories: int = 3
    seed: int = 0
    aspect_sigma: float = 0.25

    def __post_init__(self) -> None:
        lo, hi = self.objects_per_cluster
        if self.n_clusters < 0 or self.background_objects < 0 or lo < 0:
            raise ValidationError("scene counts must be non-negative")
        if lo > hi:
            raise ValidationError(f"objects_per_cluster range is inverted: {lo} > {hi}")
        if self.cluster_spread <= 0:
            raise ValidationError("cluster_spread must be positive")
        median, sigma = self.object_scale_dist
        if median <= 0 or sigma < 0:
            raise ValidationError(f"bad object_scale_dist {self.object_scale_dist}")
        if self.categories < 1:
            raise ValidationError("need at least one category")
        _check_seed(self.seed)

    def to_json(self) -> dict:
        return {
            "extent": {"width": self.extent.width, "height": self.extent.height},
            "n_clusters": self.n_clusters,
            "objects_per_cluster": list(self.objects_per_cluster),
            "cluster_spread": self.cluster_spread,
            "background_objects": self.background_objects,
            "object_scale_dist": list(self.object_scale_dist),
            "categories": self.categories,
            "seed": self.seed,
            "aspect_sigma": self.aspect_sigma,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "SceneParams":
        known = {
            "extent",
            "n_clusters",
            "objects_per_cluster",
            "cluster_spread",
            "background_objects",
            "object_scale_dist",
            "categories",
            "seed",
            "aspect_sigma",
        }
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown scene fields: {sorted(unknown)}")
        if "extent" not in payload:
            raise ConfigError("scene config is missing field 'extent'")
        kwargs = dict(payload)
        extent = payload["extent"]
        if isinstance(extent, (list, tuple)):  # configs may write [w, h]
            kwargs["extent"] = ImageExtent(*extent)
        else:
            kwargs["extent"] = ImageExtent(extent["width"], extent["height"])
        for name in ("objects_per_cluster", "object_scale_dist"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return cls(**kwargs)


# Default curve: blind below 8 px, ramps to 0.95 at 48 px, flat after.
DEFAULT_RECALL_CURVE = ((8.0, 0.0), (48.0, 0.95))


@dataclass(frozen=True)
class DetectorModel:
    """Statistical detector: recall depends only on projected object size.

    recall_curve maps projected scale (pixels in detector-input space)
    to detection probability, interpolated linearly and clamped at the
    ends. loc_noise_frac jitters box corners by that fraction of the
    projected scale. Score distributions are Beta(a, b). fp_rate is the
    Poisson mean of uniform false positives per chip; fp_scale_dist is
    (median, sigma) of their log-normal projected size. fragment_fp
    emits false positives for objects truncated below visible_fraction
    by the crop edge — the failure mode grid tiling induces on large
    objects.
    """

    recall_curve: tuple[tuple[float, float], ...] = DEFAULT_RECALL_CURVE
    loc_noise_frac: float = 0.03
    score_dist: tuple[float, float] = (8.0, 2.0)
    fp_rate: float = 0.5
    fp_score_dist: tuple[float, float] = (2.0, 6.0)
    fp_scale_dist: tuple[float, float] = (40.0, 0.5)
    fragment_fp: bool = False
    visible_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.recall_curve) < 1:
            raise ValidationError("recall_curve needs at least one knot")
        scales = [s for s, _ in self.recall_curve]
        probs = [q for _, q in self.recall_curve]
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ValidationError("recall_curve scales must be strictly increasing")
        if any(b < a for a, b in zip(probs, probs[1:])):
            raise ValidationError("recall_curve must be monotone non-decreasing")
        if any(not 0 <= q <= 1 for q in probs):
            raise ValidationError("recall_curve probabilities must be in [0, 1]")
        if self.loc_noise_frac < 0:
            raise ValidationError("loc_noise_frac must be non-negative")
        for name in ("score_dist", "fp_score_dist"):
            a, b = getattr(self, name)
            if a <= 0 or b <= 0:
                raise ValidationError(f"{name} Beta parameters must be positive")
        if self.fp_rate < 0:
            raise ValidationError("fp_rate must be non-negative")
        median, sigma = self.fp_scale_dist
        if median <= 0 or sigma < 0:
            raise ValidationError(f"bad fp_scale_dist {self.fp_scale_dist}")
        if not 0 < self.visible_fraction <= 1:
            raise ValidationError("visible_fraction must be in (0, 1]")
        _check_seed(self.seed)

    def recall_at(self, projected_scale: float) -> float:
        xs = np.array([s for s, _ in self.recall_curve])
        ys = np.array([q for _, q in self.recall_curve])
        return float(np.interp(projected_scale, xs, ys))

    def to_json(self) -> dict:
        return {
            "recall_curve": [list(k) for k in self.recall_curve],
            "loc_noise_frac": self.loc_noise_frac,
            "score_dist": list(self.score_dist),
            "fp_rate": self.fp_rate,
            "fp_score_dist": list(self.fp_score_dist),
            "fp_scale_dist": list(self.fp_scale_dist),
            "fragment_fp": self.fragment_fp,
            "visible_fraction": self.visible_fraction,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "DetectorModel":
        known = {
            "recall_curve",
            "loc_noise_frac",
            "score_dist",
            "fp_rate",
            "fp_score_dist",
            "fp_scale_dist",
            "fragment_fp",
            "visible_fraction",
            "seed",
        }
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown detector fields: {sorted(unknown)}")
        kwargs = dict(payload)
        if "recall_curve" in kwargs:
            kwargs["recall_curve"] = tuple(tuple(k) for k in kwargs["recall_curve"])
        for name in ("score_dist", "fp_score_dist", "fp_scale_dist"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return cls(**kwargs)


@dataclass(frozen=True)
class SceneLayout:
    """Where generate_scene actually put things; test/debug aid."""

    cluster_centers: tuple[tuple[float, float], ...]
    members_per_cluster: tuple[int, ...]


def _sample_box(
    rng: np.random.Generator,
    cx: float,
    cy: float,
    p: SceneParams,
) -> Box | None:
    median, sigma = p.object_scale_dist
    scale = median * float(np.exp(sigma * rng.standard_normal()))
    ratio = float(np.exp(p.aspect_sigma * rng.standard_normal()))
    half_w = 0.5 * scale * np.sqrt(ratio)
    half_h = 0.5 * scale / np.sqrt(ratio)
    raw = Box(cx - half_w, cy - half_h, cx + half_w, cy + half_h)
    clipped = clip(raw, p.extent)
    # Slivers thinner than the serialized decimal precision would not
    # survive a save/load round trip; treat them as clipped away.
    if clipped is not None and (clipped.width < 1e-3 or clipped.height < 1e-3):
        return None
    return clipped


def generate_scene_with_layout(
    p: SceneParams, image_id: int = 0
) -> tuple[ImageRecord, SceneLayout]:
    """One synthetic image plus the layout used to build it.

    Cluster centers are uniform over the image; members are the centers
    plus isotropic Gaussian offsets of std cluster_spread; background
    objects are uniform. Boxes are clipped in-bounds; objects clipped
    away entirely are skipped.
    """
    rng = scene_rng(p.seed, image_id)
    annotations: list[Annotation] = []
    next_id = 1

    centers = [
        (rng.uniform(0, p.extent.width), rng.uniform(0, p.extent.height))
        for _ in range(p.n_clusters)
    ]
    members = []
    lo, hi = p.objects_per_cluster
    for cx, cy in centers:
        n = int(rng.integers(lo, hi + 1))
        members.append(n)
        for _ in range(n):
            ox = cx + p.cluster_spread * rng.standard_normal()
            oy = cy + p.cluster_spread * rng.standard_normal()
            box = _sample_box(rng, ox, oy, p)
            category = int(rng.integers(1, p.categories + 1))
            if box is not None:
                annotations.append(Annotation(box, category, next_id))
                next_id += 1
    for _ in range(p.background_objects):
        ox = rng.uniform(0, p.extent.width)
        oy = rng.uniform(0, p.extent.height)
        box = _sample_box(rng, ox, oy, p)
        category = int(rng.integers(1, p.categories + 1))
        if box is not None:
            annotations.append(Annotation(box, category, next_id))
            next_id += 1

    record = ImageRecord(image_id=image_id, extent=p.extent, annotations=tuple(annotations))
    return record, SceneLayout(tuple(centers), tuple(members))


def generate_scene(p: SceneParams, image_id: int = 0) -> ImageRecord:
    return generate_scene_with_layout(p, image_id)[0]


def generate_batch(p: SceneParams, n_images: int, first_image_id: int = 1) -> list[ImageRecord]:
    """n_images scenes with consecutive ids, each from its own derived
    seed stream."""
    return [generate_scene(p, first_image_id + i) for i in range(n_images)]


def _jittered_local(
    rng: np.random.Generator,
    visible: Box,
    t: Transform,
    noise_frac: float,
) -> Box | None:
    """Visible box mapped into the chip frame with corner jitter; None
    when jitter collapses the box (treated as a miss)."""
    local = to_local(visible, t)
    sigma = noise_frac * object_scale(local)
    j = sigma * rng.standard_normal(4) if sigma > 0 else np.zeros(4)
    x_min, y_min = local.x_min + j[0], local.y_min + j[1]
    x_max, y_max = local.x_max + j[2], local.y_max + j[3]
    # Below the serialized decimal precision the box would collapse on a
    # save/load round trip; treat it as a miss.
    if x_max - x_min <= 1e-3 or y_max - y_min <= 1e-3:
        return None
    return Box(x_min, y_min, x_max, y_max)


def simulate_detect(image: ImageRecord, plan: ChipPlan, m: DetectorModel) -> list[Detection]:
    """Detections for one chip, in the chip-local detector frame.

    Each annotation overlapping the crop is considered through its
    visible part. Fragments below the visible-fraction cutoff are
    missed — or, with fragment_fp on, turn into a false positive with
    probability given by the fragment's own projected size. Everything
    else is detected with probability recall_curve(projected scale),
    jittered, and scored from the true-positive Beta. Uniform false
    positives are appended last.
    """
    rng = detector_rng(m.seed, image.image_id, plan.chip_id)
    t = Transform(
        offset_x=plan.crop.x_min,
        offset_y=plan.crop.y_min,
        scale=1.0 / plan.resize_factor,
    )
    dets: list[Detection] = []

    for ann in image.annotations:
        inter = intersection_area(ann.box, plan.crop)
        if inter <= 0:
            continue
        visible = Box(
            max(ann.box.x_min, plan.crop.x_min),
            max(ann.box.y_min, plan.crop.y_min),
            min(ann.box.x_max, plan.crop.x_max),
            min(ann.box.y_max, plan.crop.y_max),
        )
        frac = inter / area(ann.box)
        projected = object_scale(visible) * plan.resize_factor
        if frac < m.visible_fraction:
            if m.fragment_fp and rng.uniform() < m.recall_at(projected):
                box = _jittered_local(rng, visible, t, m.loc_noise_frac)
                if box is not None:
                    a, b = m.fp_score_dist
                    dets.append(Detection(box, ann.category_id, float(rng.beta(a, b))))
            continue
        if rng.uniform() < m.recall_at(projected):
            box = _jittered_local(rng, visible, t, m.loc_noise_frac)
            if box is not None:
                a, b = m.score_dist
                dets.append(Detection(box, ann.category_id, float(rng.beta(a, b))))

    n_fp = int(rng.poisson(m.fp_rate))
    local_w = plan.crop.width * plan.resize_factor
    local_h = plan.crop.height * plan.resize_factor
    median, sigma = m.fp_scale_dist
    categories = sorted({a.category_id for a in image.annotations}) or [1]
    for _ in range(n_fp):
        cx = rng.uniform(0, local_w)
        cy = rng.uniform(0, local_h)
        scale = median * float(np.exp(sigma * rng.standard_normal()))
        category = int(categories[int(rng.integers(0, len(categories)))])
        a, b = m.fp_score_dist
        score = float(rng.beta(a, b))
        if scale < 1e-3:  # cannot survive the serialized precision
            continue
        fp_box = Box(cx - scale / 2, cy - scale / 2, cx + scale / 2, cy + scale / 2)
        dets.append(Detection(fp_box, category, score))
    return dets
