import pytest

from clustile import (
    ConfigError,
    DetectorModel,
    FusionParams,
    ImageExtent,
    SceneParams,
    StrategySpec,
    ValidationError,
    count_forwarded,
    generate_batch,
    load_chip_detections,
    load_plans,
    plan_image,
    run_strategy,
    save_chip_detections,
    save_plans,
)
from clustile.pipeline import detect_plans, fuse_image


EXT = ImageExtent(2000, 1500)
SCENE = SceneParams(EXT, n_clusters=3, objects_per_cluster=(8, 14), seed=21)
MODEL = DetectorModel(seed=9)


@pytest.fixture(scope="module")
def batch():
    return generate_batch(SCENE, 4)


class TestStrategySpec:
    def test_labels(self):
        assert StrategySpec(name="global_only").label == "global_only"
        assert StrategySpec(name="eip", rows=2, cols=3).label == "eip(2x3)"
        assert StrategySpec(name="clusdet", topn=4).label == "clusdet(topn=4)"
        assert (
            StrategySpec(name="clusdet_no_scalenet").label
            == "clusdet_no_scalenet(topn=3)"
        )

    def test_unknown_name_rejected(self):
        with pytest.raises(ConfigError):
            StrategySpec(name="mosaic")

    def test_json_round_trip(self):
        spec = StrategySpec(name="clusdet", topn=5, merge_gap=96.0, estimator="oracle")
        assert StrategySpec.from_json(spec.to_json()) == spec

    def test_derived_params(self):
        spec = StrategySpec(name="clusdet", tau_op=0.6, topn=2, scale_range=(50, 300))
        assert spec.merge_params().iou_threshold == 0.6
        assert spec.merge_params().max_clusters == 2
        assert spec.planner_params().scale_range == (50, 300)


class TestPlanImage:
    def test_global_only_is_one_chip(self, batch):
        plan = plan_image(batch[0], StrategySpec(name="global_only"), MODEL)
        assert [c.chip_id for c in plan.chips] == ["global"]
        assert plan.clusters == ()

    def test_eip_is_grid_only(self, batch):
        plan = plan_image(batch[0], StrategySpec(name="eip", rows=2, cols=3), MODEL)
        assert len(plan.chips) == 6
        assert all(c.provenance == "grid" for c in plan.chips)

    def test_clusdet_has_global_then_cluster_chips(self, batch):
        spec = StrategySpec(name="clusdet", merge_gap=160.0)
        found_cluster_chips = False
        for image in batch:
            plan = plan_image(image, spec, MODEL)
            assert plan.chips[0].chip_id == "global"
            for chip in plan.chips[1:]:
                assert chip.provenance == "cluster"
                found_cluster_chips = True
            assert len(plan.clusters) <= spec.topn
        assert found_cluster_chips

    def test_no_scalenet_skips_scale_adjustment(self, batch):
        spec = StrategySpec(name="clusdet_no_scalenet", merge_gap=160.0)
        for image in batch:
            plan = plan_image(image, spec, MODEL)
            for chip in plan.chips[1:]:
                assert chip.projected_object_scale is None
                assert chip.partition_depth == 0
            # One chip per kept cluster, plus the global pass.
            assert len(plan.chips) == 1 + len(plan.clusters)

    def test_planning_is_deterministic(self, batch):
        spec = StrategySpec(name="clusdet", merge_gap=160.0)
        again = [plan_image(im, spec, MODEL) for im in batch]
        assert [plan_image(im, spec, MODEL) for im in batch] == again


class TestDetectAndFuse:
    def test_detect_keys_match_chip_ids(self, batch):
        spec = StrategySpec(name="clusdet", merge_gap=160.0)
        plan = plan_image(batch[0], spec, MODEL)
        raw = detect_plans(batch[0], plan, MODEL)
        assert set(raw) == {c.chip_id for c in plan.chips}

    def test_fuse_requires_all_chips(self, batch):
        spec = StrategySpec(name="clusdet", merge_gap=160.0)
        plan = plan_image(batch[0], spec, MODEL)
        raw = detect_plans(batch[0], plan, MODEL)
        missing = dict(raw)
        missing.pop(plan.chips[-1].chip_id)
        with pytest.raises(ValidationError, match="missing detections"):
            fuse_image(plan, missing, FusionParams())

    def test_fused_detections_live_in_global_frame(self, batch):
        spec = StrategySpec(name="clusdet", merge_gap=160.0)
        plan = plan_image(batch[0], spec, MODEL)
        raw = detect_plans(batch[0], plan, MODEL)
        final = fuse_image(plan, raw, FusionParams())
        bounds = batch[0].extent.as_box()
        assert final
        for d in final:
            assert d.box.x_min >= bounds.x_min - 1e-6
            assert d.box.y_max <= bounds.y_max + 600.0  # loc noise can poke out
            assert not d.in_padded_region

    def test_run_strategy_shapes(self, batch):
        plans, finals = run_strategy(batch, StrategySpec(name="eip"), MODEL)
        assert set(plans) == {im.image_id for im in batch}
        assert set(finals) == set(plans)
        assert count_forwarded({i: p.chips for i, p in plans.items()}) == 6 * len(batch)


class TestPlanPersistence:
    def test_round_trip(self, tmp_path, batch):
        spec = StrategySpec(name="clusdet", merge_gap=160.0)
        plans = {im.image_id: plan_image(im, spec, MODEL) for im in batch}
        path = tmp_path / "plans.json"
        save_plans(plans, path)
        loaded = load_plans(path)
        assert set(loaded) == set(plans)
        for image_id, plan in plans.items():
            got = loaded[image_id]
            assert [c.chip_id for c in got.chips] == [c.chip_id for c in plan.chips]
            assert len(got.clusters) == len(plan.clusters)
            for a, b in zip(got.clusters, plan.clusters):
                assert a.member_count == b.member_count
                assert a.score == pytest.approx(b.score, abs=1e-6)

    def test_chip_detections_round_trip(self, tmp_path, batch):
        spec = StrategySpec(name="eip")
        image = batch[0]
        plan = plan_image(image, spec, MODEL)
        raw = {image.image_id: detect_plans(image, plan, MODEL)}
        path = tmp_path / "chip_dets.json"
        save_chip_detections(raw, path)
        loaded = load_chip_detections(path)
        assert set(loaded) == {image.image_id}
        got = loaded[image.image_id]
        assert set(got) == set(raw[image.image_id])
        for chip_id, dets in raw[image.image_id].items():
            assert len(got[chip_id]) == len(dets)
            for a, b in zip(
                sorted(got[chip_id], key=lambda d: d.score),
                sorted(dets, key=lambda d: d.score),
            ):
                assert a.category_id == b.category_id
                assert a.score == pytest.approx(b.score, abs=1e-6)

    def test_malformed_plan_file_rejected(self, tmp_path):
        path = tmp_path / "plans.json"
        path.write_text('{"not": "a list"}')
        with pytest.raises(ValidationError):
            load_plans(path)
