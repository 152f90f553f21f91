"""Axis-aligned box arithmetic and chip/global coordinate transforms.

Boxes are continuous (sub-pixel) corner rectangles. Whether coordinates
live in the global image frame or in a chip-local frame is contextual;
the values themselves carry no frame tag. All operations are pure
functions over immutable values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ValidationError

__all__ = [
    "Box",
    "ImageExtent",
    "Transform",
    "area",
    "intersection_area",
    "iou",
    "enclosing",
    "clip",
    "to_global",
    "to_local",
    "boundary_gap",
    "contains",
    "contains_point",
    "strictly_contains_point",
]


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle with strictly positive width and height."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        for name in ("x_min", "y_min", "x_max", "y_max"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValidationError(f"Box.{name} must be finite, got {v!r}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(
                f"Box must have positive extent, got "
                f"({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def shorter_side(self) -> float:
        return min(self.width, self.height)

    @property
    def longer_side(self) -> float:
        return max(self.width, self.height)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def corners(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class ImageExtent:
    """Pixel dimensions of an image; the valid region is [0,width]x[0,height]."""

    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValidationError(
                f"ImageExtent must be at least 1x1, got {self.width}x{self.height}"
            )

    def as_box(self) -> Box:
        return Box(0.0, 0.0, float(self.width), float(self.height))


@dataclass(frozen=True)
class Transform:
    """Similarity map between frames: global = local * scale + offset."""

    offset_x: float
    offset_y: float
    scale: float = 1.0

    def __post_init__(self) -> None:
        if not (self.scale > 0.0 and math.isfinite(self.scale)):
            raise ValidationError(f"Transform.scale must be positive, got {self.scale!r}")


def area(b: Box) -> float:
    """Box area in squared pixels."""
    return b.width * b.height


def intersection_area(a: Box, b: Box) -> float:
    """Overlap area of two boxes; 0 when they are disjoint or only touch."""
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iou(a: Box, b: Box) -> float:
    """Intersection over union, in [0, 1]."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (area(a) + area(b) - inter)


def enclosing(a: Box, b: Box) -> Box:
    """Smallest box containing both inputs."""
    return Box(
        min(a.x_min, b.x_min),
        min(a.y_min, b.y_min),
        max(a.x_max, b.x_max),
        max(a.y_max, b.y_max),
    )


def clip(b: Box, extent: ImageExtent) -> Box | None:
    """Restrict a box to the image region, or None when nothing remains."""
    x_min = max(b.x_min, 0.0)
    y_min = max(b.y_min, 0.0)
    x_max = min(b.x_max, float(extent.width))
    y_max = min(b.y_max, float(extent.height))
    if x_min >= x_max or y_min >= y_max:
        return None
    return Box(x_min, y_min, x_max, y_max)


def to_global(b: Box, t: Transform) -> Box:
    """Map a local-frame box into the global frame."""
    return Box(
        b.x_min * t.scale + t.offset_x,
        b.y_min * t.scale + t.offset_y,
        b.x_max * t.scale + t.offset_x,
        b.y_max * t.scale + t.offset_y,
    )


def to_local(b: Box, t: Transform) -> Box:
    """Map a global-frame box into the local frame (inverse of to_global)."""
    return Box(
        (b.x_min - t.offset_x) / t.scale,
        (b.y_min - t.offset_y) / t.scale,
        (b.x_max - t.offset_x) / t.scale,
        (b.y_max - t.offset_y) / t.scale,
    )


def boundary_gap(a: Box, b: Box) -> float:
    """Gap between two boxes for agglomeration.

    Zero when the boxes overlap or touch; otherwise the smallest positive
    separation measured along the coordinate axes.
    """
    dx = max(max(a.x_min, b.x_min) - min(a.x_max, b.x_max), 0.0)
    dy = max(max(a.y_min, b.y_min) - min(a.y_max, b.y_max), 0.0)
    if dx > 0.0 and dy > 0.0:
        return min(dx, dy)
    return max(dx, dy)


def contains(outer: Box, inner: Box) -> bool:
    """True when inner lies fully within outer (boundaries may coincide)."""
    return (
        outer.x_min <= inner.x_min
        and outer.y_min <= inner.y_min
        and outer.x_max >= inner.x_max
        and outer.y_max >= inner.y_max
    )


def contains_point(b: Box, x: float, y: float) -> bool:
    """Closed-boundary point test, used for assigning objects to chips."""
    return b.x_min <= x <= b.x_max and b.y_min <= y <= b.y_max


def strictly_contains_point(b: Box, x: float, y: float) -> bool:
    """Open-boundary point test, used when eliminating whole-image detections."""
    return b.x_min < x < b.x_max and b.y_min < y < b.y_max
