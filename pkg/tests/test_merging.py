import numpy as np
import pytest

from clustile import (
    Box,
    Cluster,
    MergeParams,
    MergeRoundLimitError,
    ValidationError,
    icm,
    nmm,
)
from .oracles import naive_iterative_merge, naive_merge_pass
from .conftest import cluster_to_dict, random_cluster


def _to_dicts(clusters):
    return [cluster_to_dict(c) for c in clusters]


class TestNmm:
    def test_absorbs_against_seed_only(self):
        # b overlaps seed a; c overlaps the grown rectangle but not a.
        a = Cluster(Box(0, 0, 100, 100), 0.9, 1)
        b = Cluster(Box(10, 0, 110, 100), 0.5, 1)  # iou(a,b) ~ 0.82
        c = Cluster(Box(104, 0, 204, 100), 0.4, 1)  # disjoint from a
        merged = nmm([a, b, c], iou_threshold=0.7)
        assert len(merged) == 2
        assert merged[0].box == Box(0, 0, 110, 100)
        assert merged[0].score == 0.9
        assert merged[0].member_count == 2
        assert merged[1].box == c.box

    def test_disjoint_input_is_fixpoint(self):
        clusters = [
            Cluster(Box(0, 0, 10, 10), 0.3, 2),
            Cluster(Box(100, 100, 120, 130), 0.8, 5),
        ]
        merged = nmm(clusters, iou_threshold=0.5)
        assert [c.box for c in merged] == [clusters[1].box, clusters[0].box]

    def test_empty(self):
        assert nmm([], 0.5) == []

    def test_matches_oracle_pass(self, rng):
        for trial in range(150):
            n = int(rng.integers(1, 20))
            clusters = [random_cluster(rng) for _ in range(n)]
            thr = float(rng.uniform(0.2, 0.9))
            got = _to_dicts(nmm(clusters, thr))
            want = naive_merge_pass(_to_dicts(clusters), thr)
            assert got == want, f"trial {trial} diverged (thr={thr})"

    def test_iomin_mode_absorbs_contained(self):
        outer = Cluster(Box(0, 0, 100, 100), 0.9, 1)
        inner = Cluster(Box(40, 40, 60, 60), 0.2, 1)  # iou 0.04, iomin 1.0
        assert len(nmm([outer, inner], 0.7)) == 2
        merged = nmm([outer, inner], 0.7, overlap_mode="iomin")
        assert len(merged) == 1
        assert merged[0].member_count == 2


class TestIcm:
    def test_truncates_to_top_scores(self):
        clusters = [
            Cluster(Box(i * 50, 0, i * 50 + 30, 30), score, 1)
            for i, score in enumerate([0.1, 0.9, 0.5, 0.7])
        ]
        kept = icm(clusters, MergeParams(max_clusters=2))
        assert [c.score for c in kept] == [0.9, 0.7]

    def test_idempotent(self, rng):
        p = MergeParams(iou_threshold=0.6, max_clusters=3)
        for _ in range(40):
            clusters = [random_cluster(rng) for _ in range(int(rng.integers(0, 15)))]
            once = icm(clusters, p)
            assert icm(once, p) == once

    def test_matches_oracle(self, rng):
        for trial in range(150):
            n = int(rng.integers(0, 18))
            clusters = [random_cluster(rng) for _ in range(n)]
            p = MergeParams(
                iou_threshold=float(rng.uniform(0.2, 0.9)),
                max_clusters=int(rng.integers(1, 6)),
            )
            want = naive_iterative_merge(
                _to_dicts(clusters), p.iou_threshold, p.max_clusters, p.max_rounds
            )
            assert want is not None  # oracle converged; library must too
            got = _to_dicts(icm(clusters, p))
            assert got == want, f"trial {trial} diverged"

    def test_round_limit_raises(self):
        # max_rounds=1 with a set that needs two passes to get under the cap.
        mk = lambda x, s: Cluster(Box(x, 0, x + 100, 100), s, 1)
        clusters = [mk(0, 0.9), mk(5, 0.8), mk(300, 0.7), mk(305, 0.6), mk(600, 0.5), mk(605, 0.4)]
        p = MergeParams(iou_threshold=0.7, max_clusters=1, max_rounds=1)
        with pytest.raises(MergeRoundLimitError):
            icm(clusters, p)

    def test_prefix_is_monotone_in_topn(self, rng):
        # With no merges possible (well-separated clusters), raising the
        # cap only ever appends clusters to the kept prefix.
        for _ in range(20):
            clusters = []
            for i in range(int(rng.integers(1, 9))):
                x = i * 500.0
                clusters.append(
                    Cluster(Box(x, 0, x + 80, 80), float(rng.random()), int(rng.integers(1, 9)))
                )
            previous = []
            for topn in range(1, 9):
                kept = icm(clusters, MergeParams(max_clusters=topn))
                assert kept[: len(previous)] == previous
                previous = kept

    def test_params_validated(self):
        with pytest.raises(ValidationError):
            MergeParams(iou_threshold=0.0)
        with pytest.raises(ValidationError):
            MergeParams(max_clusters=0)
        with pytest.raises(ValidationError):
            MergeParams(overlap_mode="dice")
