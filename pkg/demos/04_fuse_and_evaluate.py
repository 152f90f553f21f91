"""Strategy comparison: whole image vs uniform grid vs cluster chips.

Runs the complete loop (plan, detect on every chip, remap, fuse,
evaluate) for three strategies over the same scenes with the same
simulated detector, then prints the COCO-style table and the chip-type
breakdown that explains the efficiency difference: grid tiles are
mostly empty or sparse, cluster chips almost all land on dense areas.

Run from the repo root:  python demos/04_fuse_and_evaluate.py
"""

from clustile import (
    ChipTypeParams,
    DetectorModel,
    EvalParams,
    FusionParams,
    ImageExtent,
    SceneParams,
    StrategySpec,
    chip_type_histogram,
    coco_ap,
    count_forwarded,
    detect_plans,
    fuse_image,
    generate_batch,
    plan_image,
    text_table,
)

scene = SceneParams(
    extent=ImageExtent(2000, 1400),
    n_clusters=3,
    objects_per_cluster=(12, 20),
    cluster_spread=120.0,
    background_objects=6,
    object_scale_dist=(26.0, 0.5),
    seed=21,
)
images = generate_batch(scene, 12, first_image_id=1)
model = DetectorModel(recall_curve=((8.0, 0.0), (40.0, 0.95)), seed=9)
fusion = FusionParams()

strategies = [
    StrategySpec(name="global_only"),
    StrategySpec(name="eip", rows=2, cols=3),
    StrategySpec(name="clusdet", topn=3, merge_gap=100.0),
]

results = {}
plans_by_label = {}
for spec in strategies:
    plans, final = {}, {}
    for image in images:
        plan = plan_image(image, spec, model)
        raw = detect_plans(image, plan, model)   # chip-local detections
        final[image.image_id] = fuse_image(plan, raw, fusion)
        plans[image.image_id] = plan
    result = coco_ap(final, images, EvalParams())
    forwarded = count_forwarded({i: p.chips for i, p in plans.items()})
    results[spec.label] = result.with_forwarded(forwarded)
    plans_by_label[spec.label] = plans

print(text_table(results))
print("(#img = chips sent through the detector, the cost metric. The\n"
      " whole-image pass is cheap but blind to small objects; the grid\n"
      " buys the best AP at a flat 6 chips/image; cluster chips recover\n"
      " most of that gain while paying only where objects clump)\n")

# Where do the chips land? Count objects under each chip.
params = ChipTypeParams()   # sparse <= 2 objects, clustered > 10
print(f"chip types (sparse <= {params.sparse_max} objects, "
      f"clustered > {params.common_max}):")
for label in ("eip(2x3)", "clusdet(topn=3)"):
    plans = plans_by_label[label]
    hist = chip_type_histogram(
        {i: p.chips for i, p in plans.items()}, images, params
    )
    print(f"  {label:<16} sparse {hist.sparse_fraction:5.1%}   "
          f"common {hist.common_fraction:5.1%}   "
          f"clustered {hist.clustered_fraction:5.1%}   "
          f"zero-object {hist.zero_fraction:5.1%}")
