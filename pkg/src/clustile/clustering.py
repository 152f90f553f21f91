"""Cluster rectangles from annotations or from initial detections.

Two producers share one agglomeration rule: boxes are connected when
their boundary gap is at most merge_gap, and every connected component
with at least min_members boxes becomes a cluster whose rectangle is
the enclosing box of its members.

generate_gt_clusters builds training-label clusters from ground truth;
propose_clusters stands in for a learned cluster proposer by grouping
the initial whole-image detections instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import ValidationError
from .geometry import Box, ImageExtent, boundary_gap, clip, enclosing
from .records import Annotation, Cluster, Detection

__all__ = [
    "ClusterGenParams",
    "ProposalParams",
    "generate_gt_clusters",
    "propose_clusters",
]


@dataclass(frozen=True)
class ClusterGenParams:
    """Knobs for ground-truth cluster generation.

    The defaults are placeholders chosen for desk-scale scenes; nothing
    downstream depends on their exact values.
    """

    merge_gap: float = 32.0
    min_members: int = 3
    margin: float = 8.0

    def __post_init__(self) -> None:
        if self.merge_gap < 0:
            raise ValidationError(f"merge_gap must be >= 0, got {self.merge_gap}")
        if self.min_members < 1:
            raise ValidationError(f"min_members must be >= 1, got {self.min_members}")
        if self.margin < 0:
            raise ValidationError(f"margin must be >= 0, got {self.margin}")


@dataclass(frozen=True)
class ProposalParams:
    """Knobs for detection-driven cluster proposals."""

    merge_gap: float = 32.0
    min_members: int = 3
    score_mode: str = "mean_member_score"

    def __post_init__(self) -> None:
        if self.merge_gap < 0:
            raise ValidationError(f"merge_gap must be >= 0, got {self.merge_gap}")
        if self.min_members < 1:
            raise ValidationError(f"min_members must be >= 1, got {self.min_members}")
        if self.score_mode not in ("mean_member_score", "count_normalized"):
            raise ValidationError(f"unknown score_mode {self.score_mode!r}")


class _UnionFind:
    def __init__(self, n: int) -> None:
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> None:
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[rj] = ri


def _components(boxes: Sequence[Box], merge_gap: float) -> list[list[int]]:
    """Connected components of the pairwise gap graph.

    Connectivity is symmetric, so the partition does not depend on the
    input ordering.
    """
    n = len(boxes)
    uf = _UnionFind(n)
    for i in range(n):
        for j in range(i + 1, n):
            if boundary_gap(boxes[i], boxes[j]) <= merge_gap:
                uf.union(i, j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(uf.find(i), []).append(i)
    return list(groups.values())


def _enclosure(boxes: Sequence[Box], members: Sequence[int]) -> Box:
    out = boxes[members[0]]
    for i in members[1:]:
        out = enclosing(out, boxes[i])
    return out


def generate_gt_clusters(
    annotations: Sequence[Annotation], p: ClusterGenParams, extent: ImageExtent
) -> list[Cluster]:
    """Group ground-truth boxes into clusters of at least min_members.

    Each cluster rectangle is the enclosing box of its members expanded
    by margin and clipped to the image. Output is sorted by member count
    descending; fewer than min_members objects in total yields an empty
    list.
    """
    boxes = [a.box for a in annotations]
    clusters = []
    for members in _components(boxes, p.merge_gap):
        if len(members) < p.min_members:
            continue
        rect = _enclosure(boxes, members)
        rect = Box(
            rect.x_min - p.margin,
            rect.y_min - p.margin,
            rect.x_max + p.margin,
            rect.y_max + p.margin,
        )
        clipped = clip(rect, extent)
        if clipped is None:
            continue
        clusters.append(Cluster(box=clipped, score=1.0, member_count=len(members)))
    clusters.sort(key=lambda c: (-c.member_count, c.box.corners()))
    return clusters


def propose_clusters(
    detections: Sequence[Detection], p: ProposalParams, extent: ImageExtent
) -> list[Cluster]:
    """Group whole-image detections into scored cluster proposals.

    score_mode "mean_member_score" averages the member detection scores;
    "count_normalized" uses min(1, member_count / 10), monotone in local
    density and bounded. Output is sorted by score descending.
    """
    boxes = [d.box for d in detections]
    clusters = []
    for members in _components(boxes, p.merge_gap):
        if len(members) < p.min_members:
            continue
        clipped = clip(_enclosure(boxes, members), extent)
        if clipped is None:
            continue
        if p.score_mode == "mean_member_score":
            score = sum(detections[i].score for i in members) / len(members)
        else:
            score = min(1.0, len(members) / 10.0)
        clusters.append(Cluster(box=clipped, score=score, member_count=len(members)))
    clusters.sort(key=lambda c: (-c.score, -c.member_count, c.box.corners()))
    return clusters
