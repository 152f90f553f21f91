"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from clustile import Annotation, Box, Cluster, Detection, ImageExtent, ImageRecord


def random_box(rng: np.random.Generator, extent=(1000.0, 1000.0), max_side=200.0) -> Box:
    w = float(rng.uniform(4.0, max_side))
    h = float(rng.uniform(4.0, max_side))
    x = float(rng.uniform(0.0, extent[0] - w))
    y = float(rng.uniform(0.0, extent[1] - h))
    return Box(x, y, x + w, y + h)


def random_cluster(rng: np.random.Generator, extent=(1000.0, 1000.0)) -> Cluster:
    return Cluster(
        box=random_box(rng, extent, max_side=400.0),
        score=float(rng.random()),
        member_count=int(rng.integers(1, 40)),
    )


def random_detection(
    rng: np.random.Generator, extent=(1000.0, 1000.0), categories=3, source="global"
) -> Detection:
    return Detection(
        box=random_box(rng, extent),
        category_id=int(rng.integers(1, categories + 1)),
        score=float(rng.random()),
        source=source,
    )


def as_tuple(b: Box) -> tuple[float, float, float, float]:
    return (b.x_min, b.y_min, b.x_max, b.y_max)


def cluster_to_dict(c: Cluster) -> dict:
    return {"box": as_tuple(c.box), "score": c.score, "members": c.member_count}


def detection_to_dict(d: Detection) -> dict:
    return {
        "box": as_tuple(d.box),
        "score": d.score,
        "category": d.category_id,
        "source": d.source,
    }


def tiny_image(image_id=1, width=640, height=480, annotations=()) -> ImageRecord:
    return ImageRecord(image_id, ImageExtent(width, height), tuple(annotations))


def make_annotation(x, y, w, h, category_id=1, object_id=1) -> Annotation:
    return Annotation(Box(x, y, x + w, y + h), category_id, object_id)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
