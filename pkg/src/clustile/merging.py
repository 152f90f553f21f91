"""Greedy reduction of dense cluster sets.

nmm (non-max merging) makes one greedy pass: the highest-scored cluster
absorbs every remaining cluster whose overlap with it exceeds the
threshold, the absorbed set collapses to its enclosing rectangle, and
the pass re-seeds from what is left. icm repeats nmm until at most
max_clusters remain or a pass stops shrinking the set, then keeps the
top-scored prefix.

Overlap is IoU by default. Because enclosing-rectangle growth can make
IoU conservative, intersection-over-minimum is available behind the
overlap_mode switch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MergeRoundLimitError, ValidationError
from .geometry import Box
from .records import Cluster

__all__ = ["MergeParams", "nmm", "icm"]

IOU = "iou"
IOMIN = "iomin"


@dataclass(frozen=True)
class MergeParams:
    iou_threshold: float = 0.7
    max_clusters: int = 3
    max_rounds: int = 16
    overlap_mode: str = IOU

    def __post_init__(self) -> None:
        if not (0.0 < self.iou_threshold < 1.0):
            raise ValidationError(
                f"iou_threshold must be in (0, 1), got {self.iou_threshold}"
            )
        if self.max_clusters < 1:
            raise ValidationError(f"max_clusters must be >= 1, got {self.max_clusters}")
        if self.max_rounds < 1:
            raise ValidationError(f"max_rounds must be >= 1, got {self.max_rounds}")
        if self.overlap_mode not in (IOU, IOMIN):
            raise ValidationError(f"unknown overlap_mode {self.overlap_mode!r}")


def _sort_key(c: Cluster):
    b = c.box
    area = b.width * b.height
    return (-c.score, -area, b.x_min, b.y_min, b.x_max, b.y_max, -c.member_count)


def _overlap_row(seed: np.ndarray, others: np.ndarray, mode: str) -> np.ndarray:
    """Overlap of one box against N boxes; boxes are (x1, y1, x2, y2) rows."""
    ix1 = np.maximum(seed[0], others[:, 0])
    iy1 = np.maximum(seed[1], others[:, 1])
    ix2 = np.minimum(seed[2], others[:, 2])
    iy2 = np.minimum(seed[3], others[:, 3])
    inter = np.clip(ix2 - ix1, 0.0, None) * np.clip(iy2 - iy1, 0.0, None)
    seed_area = (seed[2] - seed[0]) * (seed[3] - seed[1])
    other_areas = (others[:, 2] - others[:, 0]) * (others[:, 3] - others[:, 1])
    if mode == IOMIN:
        denom = np.minimum(seed_area, other_areas)
    else:
        denom = seed_area + other_areas - inter
    return inter / denom


def nmm(
    clusters: list[Cluster], iou_threshold: float, overlap_mode: str = IOU
) -> list[Cluster]:
    """One non-max merging pass.

    Every input cluster is absorbed into exactly one output cluster. An
    output's box is the enclosing rectangle of its absorbed members, its
    score the maximum of theirs (the seed's, by construction) and its
    member_count their sum. Absorption is decided against the seed box
    only; the grown rectangle is not re-checked within the pass.
    """
    if not clusters:
        return []
    pool = sorted(clusters, key=_sort_key)
    boxes = np.array([c.box.corners() for c in pool], dtype=np.float64)
    alive = np.ones(len(pool), dtype=bool)

    merged: list[Cluster] = []
    for i in range(len(pool)):
        if not alive[i]:
            continue
        alive[i] = False
        rest = np.flatnonzero(alive)
        absorbed = [i]
        if rest.size:
            overlaps = _overlap_row(boxes[i], boxes[rest], overlap_mode)
            taken = rest[overlaps > iou_threshold]
            alive[taken] = False
            absorbed.extend(int(j) for j in taken)
        x1, y1 = boxes[absorbed, 0].min(), boxes[absorbed, 1].min()
        x2, y2 = boxes[absorbed, 2].max(), boxes[absorbed, 3].max()
        merged.append(
            Cluster(
                box=Box(float(x1), float(y1), float(x2), float(y2)),
                score=pool[i].score,
                member_count=sum(pool[j].member_count for j in absorbed),
            )
        )
    merged.sort(key=_sort_key)
    return merged


def icm(clusters: list[Cluster], p: MergeParams) -> list[Cluster]:
    """Iterative cluster merging down to at most p.max_clusters clusters.

    Repeats nmm while the set is larger than max_clusters, stopping early
    when a pass no longer shrinks it, then returns the score-descending
    prefix of length min(max_clusters, remaining). Idempotent.

    Raises MergeRoundLimitError when more than p.max_rounds passes run,
    which signals a non-terminating configuration; each pass either
    shrinks the set or reaches a fixpoint, so the guard should never
    fire in practice.
    """
    current = sorted(clusters, key=_sort_key)
    rounds = 0
    while len(current) > p.max_clusters:
        rounds += 1
        if rounds > p.max_rounds:
            raise MergeRoundLimitError(
                f"icm did not converge within {p.max_rounds} rounds "
                f"({len(current)} clusters remain, target {p.max_clusters})"
            )
        reduced = nmm(current, p.iou_threshold, p.overlap_mode)
        if len(reduced) == len(current):
            current = reduced
            break
        current = reduced
    return current[: min(p.max_clusters, len(current))]
