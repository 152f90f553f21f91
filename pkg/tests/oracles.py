"""Independent reference implementations used to cross-check the library.

Everything here is deliberately written the slow, literal way — plain
Python loops, no numpy vectorization, no code shared with the package —
so that agreement between the two is evidence rather than tautology.
The canonical tie-break orderings are part of the published contract
and are therefore restated here, but all mechanics (overlap tests,
greedy loops, precision bookkeeping) are re-derived from scratch.
"""

from __future__ import annotations

import math


# ---------------------------------------------------------------------------
# plain-tuple box helpers (x_min, y_min, x_max, y_max)


def box_area(b):
    return (b[2] - b[0]) * (b[3] - b[1])


def box_iou(a, b):
    ix1 = max(a[0], b[0])
    iy1 = max(a[1], b[1])
    ix2 = min(a[2], b[2])
    iy2 = min(a[3], b[3])
    iw = ix2 - ix1
    ih = iy2 - iy1
    if iw < 0.0:
        iw = 0.0
    if ih < 0.0:
        ih = 0.0
    inter = iw * ih
    denom = box_area(a) + box_area(b) - inter
    if denom <= 0.0:
        return 0.0
    return inter / denom


def box_iomin(a, b):
    ix1 = max(a[0], b[0])
    iy1 = max(a[1], b[1])
    ix2 = min(a[2], b[2])
    iy2 = min(a[3], b[3])
    iw = ix2 - ix1
    ih = iy2 - iy1
    if iw < 0.0:
        iw = 0.0
    if ih < 0.0:
        ih = 0.0
    inter = iw * ih
    denom = min(box_area(a), box_area(b))
    if denom <= 0.0:
        return 0.0
    return inter / denom


def rasterized_iou(a, b, cell=0.25):
    """IoU by counting sub-pixel grid cells; slow but assumption-free.

    Boxes must have integer-multiple-of-cell coordinates for this to be
    exact, which the tests arrange.
    """
    x_lo = min(a[0], b[0])
    y_lo = min(a[1], b[1])
    x_hi = max(a[2], b[2])
    y_hi = max(a[3], b[3])
    nx = int(round((x_hi - x_lo) / cell))
    ny = int(round((y_hi - y_lo) / cell))
    in_a = in_b = in_both = 0
    for iy in range(ny):
        cy = y_lo + (iy + 0.5) * cell
        for ix in range(nx):
            cx = x_lo + (ix + 0.5) * cell
            hit_a = a[0] < cx < a[2] and a[1] < cy < a[3]
            hit_b = b[0] < cx < b[2] and b[1] < cy < b[3]
            in_a += hit_a
            in_b += hit_b
            in_both += hit_a and hit_b
    union = in_a + in_b - in_both
    return in_both / union if union else 0.0


# ---------------------------------------------------------------------------
# greedy cluster merging
#
# A cluster is a dict {"box": (x1, y1, x2, y2), "score": s, "members": m}.
# The canonical ordering (score desc, area desc, then corners, then member
# count desc) is contractual; see the package docs.


def _cluster_rank(c):
    b = c["box"]
    return (
        -c["score"],
        -box_area(b),
        b[0],
        b[1],
        b[2],
        b[3],
        -c["members"],
    )


def naive_merge_pass(clusters, threshold, mode="iou"):
    """One greedy absorption pass, written as a literal loop.

    The best remaining cluster absorbs every other remaining cluster
    whose overlap with the *seed box* exceeds the threshold; the group
    collapses to its enclosing rectangle with the seed's score and the
    summed member count. The output is re-ranked.
    """
    overlap = box_iomin if mode == "iomin" else box_iou
    pool = sorted(clusters, key=_cluster_rank)
    used = [False] * len(pool)
    out = []
    for i in range(len(pool)):
        if used[i]:
            continue
        used[i] = True
        seed = pool[i]
        group = [seed]
        for j in range(i + 1, len(pool)):
            if used[j]:
                continue
            if overlap(seed["box"], pool[j]["box"]) > threshold:
                used[j] = True
                group.append(pool[j])
        x1 = min(g["box"][0] for g in group)
        y1 = min(g["box"][1] for g in group)
        x2 = max(g["box"][2] for g in group)
        y2 = max(g["box"][3] for g in group)
        out.append(
            {
                "box": (x1, y1, x2, y2),
                "score": seed["score"],
                "members": sum(g["members"] for g in group),
            }
        )
    out.sort(key=_cluster_rank)
    return out


def naive_iterative_merge(clusters, threshold, keep, max_rounds=16, mode="iou"):
    """Repeat merge passes until the set is small enough or stops
    shrinking, then keep the top of the ranking. Returns None when the
    round budget is exhausted (the caller checks the library raises)."""
    current = sorted(clusters, key=_cluster_rank)
    rounds = 0
    while len(current) > keep:
        rounds += 1
        if rounds > max_rounds:
            return None
        reduced = naive_merge_pass(current, threshold, mode)
        if len(reduced) == len(current):
            current = reduced
            break
        current = reduced
    return current[: min(keep, len(current))]


# ---------------------------------------------------------------------------
# non-maximum suppression
#
# A detection is a dict {"box": t4, "score": s, "category": c, "source": str}.


def _det_rank(d):
    b = d["box"]
    return (
        -d["score"],
        -box_area(b),
        b[0],
        b[1],
        b[2],
        b[3],
        d["category"],
        d["source"],
    )


def brute_force_nms(dets, threshold):
    """O(n^2) per-category greedy suppression: walk the ranking, keep a
    detection unless it overlaps an already-kept detection of the same
    category by more than the threshold."""
    ordered = sorted(dets, key=_det_rank)
    kept = []
    for d in ordered:
        suppressed = False
        for k in kept:
            if k["category"] != d["category"]:
                continue
            if box_iou(k["box"], d["box"]) > threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(d)
    return kept


# ---------------------------------------------------------------------------
# average precision
#
# Inputs: per-image detections {"box","score","category"} and ground truth
# {"box","category","area_of_record": None} — area is taken from the box.


def _ap_det_rank(d):
    b = d["box"]
    return (-d["score"], -box_area(b), b[0], b[1], b[2], b[3], d["category"])


def _precision_at_recall_points(flags, n_gt, n_points):
    """Interpolated precision sampled at evenly spaced recall points.

    flags is the pooled hit/miss sequence in ranked order. At each
    sample point the precision is the best achievable at any recall at
    or beyond that point (the running-maximum envelope from the right).
    """
    n = len(flags)
    tp = 0
    recalls = []
    precisions = []
    for k, hit in enumerate(flags):
        if hit:
            tp += 1
        recalls.append(tp / n_gt)
        precisions.append(tp / (k + 1))
    envelope = [0.0] * n
    best = 0.0
    for k in range(n - 1, -1, -1):
        if precisions[k] > best:
            best = precisions[k]
        envelope[k] = best
    total = 0.0
    for s in range(n_points):
        point = s / (n_points - 1)
        idx = None
        for k in range(n):
            if recalls[k] >= point:
                idx = k
                break
        total += envelope[idx] if idx is not None else 0.0
    return total / n_points


def reference_average_precision(
    dets_by_image,
    gts_by_image,
    iou_thresholds,
    bucket=None,
    max_dets=500,
    n_points=101,
):
    """Category-mean, threshold-mean interpolated AP.

    bucket, when given, is an (area_lo, area_hi) half-open interval
    applied to ground truth and detections alike before matching.
    Returns None when no category has ground truth in scope.
    """
    image_ids = sorted(gts_by_image)

    def in_bucket(box):
        if bucket is None:
            return True
        a = box_area(box)
        return bucket[0] <= a < bucket[1]

    scoped_dets = {}
    scoped_gts = {}
    categories = set()
    for image_id in image_ids:
        ranked = sorted(dets_by_image.get(image_id, []), key=_ap_det_rank)[:max_dets]
        scoped_dets[image_id] = [d for d in ranked if in_bucket(d["box"])]
        scoped_gts[image_id] = [g for g in gts_by_image[image_id] if in_bucket(g["box"])]
        categories.update(d["category"] for d in scoped_dets[image_id])
        categories.update(g["category"] for g in scoped_gts[image_id])

    per_category = {}
    for cat in sorted(categories):
        n_gt = sum(
            1 for image_id in image_ids for g in scoped_gts[image_id] if g["category"] == cat
        )
        if n_gt == 0:
            continue
        ap_sum = 0.0
        for t in iou_thresholds:
            pooled = []
            for image_id in image_ids:
                dets = [d for d in scoped_dets[image_id] if d["category"] == cat]
                gts = [g for g in scoped_gts[image_id] if g["category"] == cat]
                taken = [False] * len(gts)
                for d in dets:
                    best_j = -1
                    best_v = 0.0
                    for j, g in enumerate(gts):
                        if taken[j]:
                            continue
                        v = box_iou(d["box"], g["box"])
                        if v >= t and v > best_v:
                            best_v = v
                            best_j = j
                    if best_j >= 0:
                        taken[best_j] = True
                        pooled.append((_ap_det_rank(d), True))
                    else:
                        pooled.append((_ap_det_rank(d), False))
            pooled.sort(key=lambda r: r[0])
            flags = [hit for _, hit in pooled]
            ap_sum += _precision_at_recall_points(flags, n_gt, n_points) if flags else 0.0
        per_category[cat] = ap_sum / len(iou_thresholds)

    if not per_category:
        return None
    return sum(per_category.values()) / len(per_category)


# ---------------------------------------------------------------------------
# finite differences


def central_difference(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def relative_error(got, want):
    denom = max(abs(got), abs(want))
    if denom == 0.0:
        return 0.0
    return abs(got - want) / denom


# ---------------------------------------------------------------------------
# connected components by pairwise gap (clustering oracle)


def _axis_gap(a, b):
    dx = max(max(a[0], b[0]) - min(a[2], b[2]), 0.0)
    dy = max(max(a[1], b[1]) - min(a[3], b[3]), 0.0)
    if dx > 0.0 and dy > 0.0:
        return min(dx, dy)
    return max(dx, dy)


def bfs_components(boxes, merge_gap):
    """Connected components where boxes within merge_gap (axis gap,
    diagonal neighbours use the smaller axis separation) are linked.
    Breadth-first search, adjacency recomputed on demand."""
    n = len(boxes)
    seen = [False] * n
    components = []
    for start in range(n):
        if seen[start]:
            continue
        queue = [start]
        seen[start] = True
        members = []
        while queue:
            i = queue.pop(0)
            members.append(i)
            for j in range(n):
                if not seen[j] and _axis_gap(boxes[i], boxes[j]) <= merge_gap:
                    seen[j] = True
                    queue.append(j)
        components.append(sorted(members))
    return components


# ---------------------------------------------------------------------------
# smooth L1 (reference form)


def reference_smooth_l1(x):
    ax = abs(x)
    if ax < 1.0:
        return 0.5 * x * x
    return ax - 0.5


def reference_mean_smooth_l1(offsets, targets):
    assert len(offsets) == len(targets)
    total = 0.0
    for o, t in zip(offsets, targets):
        total += reference_smooth_l1(o - t)
    return total / len(offsets)
