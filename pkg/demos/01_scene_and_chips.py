"""From one synthetic scene to a chip plan.

Walks the planning half of the pipeline on a single image: simulate a
clustered scene, detect on the downscaled whole image, group the coarse
detections into cluster proposals, merge the proposals down to a
handful, estimate the object scale inside each survivor, and size one
chip (or several, if a cluster is too large) per cluster.

Run from the repo root:  python demos/01_scene_and_chips.py
"""

from clustile import (
    DetectorModel,
    ImageExtent,
    MergeParams,
    PlannerParams,
    ProposalParams,
    SceneParams,
    build_estimator,
    estimate_scale,
    generate_scene,
    global_chip,
    icm,
    plan_pipeline,
    propose_clusters,
    remap,
    simulate_detect,
)

scene = SceneParams(
    extent=ImageExtent(2400, 1600),
    n_clusters=3,
    objects_per_cluster=(12, 20),
    cluster_spread=120.0,
    background_objects=6,
    object_scale_dist=(30.0, 0.4),
    seed=2,
)
image = generate_scene(scene, image_id=1)
print(f"scene: {image.extent.width}x{image.extent.height}, "
      f"{len(image.annotations)} objects")

# Whole-image pass: the image is resized to the detector input (600 px
# here), so a 30 px object arrives at ~8 px -- many are missed, but the
# survivors are enough to show where the clumps are.
params = PlannerParams()
g = global_chip(image.extent, params)
print(f"global pass resize factor: {g.resize_factor:.3f}")
raw = simulate_detect(
    image, g, DetectorModel(recall_curve=((6.0, 0.0), (24.0, 0.85)), seed=7)
)
dets = remap(raw, g)
print(f"whole-image detections: {len(dets)} of {len(image.annotations)} objects")

# Group detections whose boxes come within 64 px of each other; keep
# groups of three or more; each proposal is the members' enclosure.
proposals = propose_clusters(dets, ProposalParams(merge_gap=64.0), image.extent)
print(f"\ncluster proposals: {len(proposals)}")
for c in proposals:
    x1, y1, x2, y2 = c.box.corners()
    print(f"  score={c.score:.3f} members={c.member_count:2d} "
          f"box=[{x1:.0f}, {y1:.0f}, {x2:.0f}, {y2:.0f}]")

# Merge overlapping proposals greedily and keep the best three.
clusters = icm(proposals, MergeParams(iou_threshold=0.7, max_clusters=3))
print(f"after merging, top clusters: {len(clusters)}")

# Median member size is a serviceable scale estimate when detections
# exist; the oracle and regressor estimators are drop-in replacements.
estimator = build_estimator("pass_through")
scales = [estimate_scale(c, dets, estimator, image) for c in clusters]
for c, s in zip(clusters, scales):
    print(f"  estimated object scale in cluster: {s:.1f} px")

# One whole-image chip plus each cluster's chips. A chip's projected
# object scale is the estimate times its resize factor; the planner
# pads crops whose objects would blow past the upper band edge and
# splits crops whose objects would shrink below the lower one (up to a
# depth cap -- a deeply split chip may stay under the band, flagged by
# its depth rather than ignored).
chips = plan_pipeline(image, clusters, scales, params)
print(f"\nchip plan ({len(chips)} chips, scale band {params.scale_range}):")
for chip in chips:
    w, h = chip.crop.width, chip.crop.height
    proj = (f"{chip.projected_object_scale:.0f} px"
            if chip.projected_object_scale is not None else "--")
    flags = []
    if chip.partition_depth:
        flags.append(f"split depth {chip.partition_depth}")
    if chip.boundary_clipped:
        flags.append("clipped at image edge")
    print(f"  {chip.chip_id:<14} crop {w:6.0f}x{h:6.0f}  "
          f"resize x{chip.resize_factor:5.2f}  projected {proj:>7} "
          f" {', '.join(flags)}")
