"""How dense proposal sets collapse to a few clusters.

The merger runs greedy passes: the highest-scored proposal absorbs
every remaining one whose overlap exceeds a threshold, the absorbed set
collapses to its enclosing rectangle, and the pass re-seeds from what is
left. Passes repeat until the set is small enough or stops shrinking;
the top-scored prefix is kept. Because an enclosure is bigger than its
parts, a second pass can merge rectangles the first pass could not --
that is what makes the repeated form stronger than a single sweep.

Run from the repo root:  python demos/02_merge_dense_proposals.py
"""

from clustile import Box, Cluster, MergeParams, icm, nmm

def show(tag, clusters):
    print(f"{tag}: {len(clusters)}")
    for c in clusters:
        x1, y1, x2, y2 = c.box.corners()
        print(f"  score={c.score:.2f} members={c.member_count:2d} "
              f"[{x1:4.0f},{y1:4.0f},{x2:4.0f},{y2:4.0f}]")

# A chain of shifted rectangles: neighbours overlap heavily, the ends
# barely at all. Scores decrease along the chain so absorption is
# deterministic and easy to follow.
chain = [
    Cluster(Box(100 + 40 * i, 100, 300 + 40 * i, 260), score=0.9 - 0.1 * i,
            member_count=5)
    for i in range(6)
]
show("proposals", chain)

# One pass: the 0.9 seed absorbs its close neighbours, then the best
# leftover seeds the next group.
show("\nafter one merging pass", nmm(chain, iou_threshold=0.4))

# Repeated passes with a cap: the pass output is re-merged (the grown
# enclosures now overlap each other) until at most two clusters remain.
merged = icm(chain, MergeParams(iou_threshold=0.4, max_clusters=2))
show("\nafter repeated merging, capped at 2", merged)

# With a high threshold nothing ever merges -- the cap alone trims the
# list, keeping the best-scored prefix.
prefix = icm(chain, MergeParams(iou_threshold=0.95, max_clusters=2))
show("\nhigh threshold: merging is a no-op, cap keeps the best 2", prefix)

# Member counts add up across merges, so a merged cluster remembers how
# much evidence it aggregates -- the planner and the proposal scorer
# both lean on that.
total_in = sum(c.member_count for c in chain)
total_out = sum(c.member_count for c in nmm(chain, iou_threshold=0.4))
print(f"\nmember counts are conserved: {total_in} in, {total_out} out")
