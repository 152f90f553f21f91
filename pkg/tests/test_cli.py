import csv
import json
import xml.etree.ElementTree as ET
from pathlib import Path

import pytest

from clustile import load_dataset
from clustile.cli import main

BASE_SCENE = {
    "extent": [900, 600],
    "n_clusters": 2,
    "objects_per_cluster": [4, 6],
    "cluster_spread": 40.0,
    "background_objects": 3,
}


def make_config(tmp_path, out_name="run", **extra):
    cfg = {
        "out": str(tmp_path / out_name),
        "seed": 11,
        "n_images": 2,
        "scene": dict(BASE_SCENE),
        "detector": {"fp_rate": 0.2},
        "strategy": {"name": "clusdet", "topn": 3},
    }
    cfg.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path, Path(cfg["out"])


class TestConfigHandling:
    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["plan", "--config", str(tmp_path / "nope.json")]) == 2
        assert "error[ConfigError]" in capsys.readouterr().err

    def test_malformed_json(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text("{not json")
        assert main(["plan", "--config", str(cfg)]) == 2
        err = capsys.readouterr().err
        assert "malformed JSON" in err and "line 1" in err

    def test_config_must_be_object(self, tmp_path, capsys):
        cfg = tmp_path / "list.json"
        cfg.write_text("[1, 2]")
        assert main(["plan", "--config", str(cfg)]) == 2
        assert "must be a JSON object" in capsys.readouterr().err

    def test_missing_out(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"seed": 1, "scene": dict(BASE_SCENE)}))
        assert main(["simulate", "--config", str(cfg)]) == 2
        assert "out" in capsys.readouterr().err

    def test_set_requires_key_value(self, tmp_path, capsys):
        cfg, _ = make_config(tmp_path)
        assert main(["plan", "--config", str(cfg), "--set", "seed13"]) == 2
        assert "key=value" in capsys.readouterr().err

    def test_bad_log_level(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("CLUSTILE_LOG", "loud")
        cfg, _ = make_config(tmp_path)
        assert main(["simulate", "--config", str(cfg)]) == 2
        assert "CLUSTILE_LOG" in capsys.readouterr().err

    def test_log_level_accepted(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("CLUSTILE_LOG", "debug")
        cfg, out = make_config(tmp_path)
        assert main(["simulate", "--config", str(cfg)]) == 0
        assert (out / "dataset.json").exists()

    def test_command_is_required(self):
        with pytest.raises(SystemExit):
            main([])

    def test_sweep_only_valid_for_compare(self, tmp_path, capsys):
        cfg, _ = make_config(tmp_path)
        assert main(["plan", "--config", str(cfg), "--topn", "1..3"]) == 2
        assert "compare" in capsys.readouterr().err


class TestStages:
    def test_simulate_writes_dataset(self, tmp_path, capsys):
        cfg, out = make_config(tmp_path)
        assert main(["simulate", "--config", str(cfg)]) == 0
        assert "wrote 2 images" in capsys.readouterr().out
        images = load_dataset(out / "dataset.json")
        assert [img.image_id for img in images] == [1, 2]

    def test_simulate_requires_scene(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"out": str(tmp_path / "run"), "seed": 1}))
        assert main(["simulate", "--config", str(cfg)]) == 2
        assert "scene" in capsys.readouterr().err

    def test_stage_chain_writes_expected_files(self, tmp_path, capsys):
        cfg, out = make_config(tmp_path)
        expected = {
            "simulate": "dataset.json",
            "plan": "plans_clusdet_top3.json",
            "detect": "chip_dets_clusdet_top3.json",
            "fuse": "final_clusdet_top3.json",
            "eval": "eval_clusdet_top3.json",
        }
        for command, filename in expected.items():
            assert main([command, "--config", str(cfg)]) == 0
            assert (out / filename).exists()
        # the eval table lands on stdout
        assert "strategy" in capsys.readouterr().out

    def test_eval_from_scratch_produces_all_inputs(self, tmp_path):
        cfg, out = make_config(tmp_path)
        assert main(["eval", "--config", str(cfg)]) == 0
        for filename in (
            "dataset.json",
            "plans_clusdet_top3.json",
            "chip_dets_clusdet_top3.json",
            "final_clusdet_top3.json",
            "eval_clusdet_top3.json",
        ):
            assert (out / filename).exists(), filename

    def test_plan_reports_chip_count(self, tmp_path, capsys):
        cfg, _ = make_config(tmp_path)
        assert main(["plan", "--config", str(cfg)]) == 0
        assert "planned" in capsys.readouterr().out

    def test_fuse_rejects_incomplete_chip_detections(self, tmp_path, capsys):
        cfg, out = make_config(tmp_path)
        assert main(["detect", "--config", str(cfg)]) == 0
        path = out / "chip_dets_clusdet_top3.json"
        records = json.loads(path.read_text())
        assert len(records) >= 2
        path.write_text(json.dumps(records[1:]))
        assert main(["fuse", "--config", str(cfg)]) == 2
        assert "missing detections" in capsys.readouterr().err

    def test_external_dataset_path(self, tmp_path):
        cfg_a, out_a = make_config(tmp_path, out_name="a")
        assert main(["simulate", "--config", str(cfg_a)]) == 0
        cfg_b = tmp_path / "b.json"
        cfg_b.write_text(
            json.dumps(
                {
                    "out": str(tmp_path / "b"),
                    "seed": 11,
                    "dataset": str(out_a / "dataset.json"),
                    "strategy": {"name": "global_only"},
                }
            )
        )
        assert main(["plan", "--config", str(cfg_b)]) == 0
        assert (tmp_path / "b" / "plans_global_only.json").exists()

    def test_missing_dataset_without_scene(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"out": str(tmp_path / "run"), "seed": 1}))
        assert main(["plan", "--config", str(cfg)]) == 2
        assert "no 'scene' section" in capsys.readouterr().err


class TestOverrides:
    def test_set_overrides_top_level(self, tmp_path):
        cfg, out = make_config(tmp_path)
        assert main(["simulate", "--config", str(cfg), "--set", "n_images=3"]) == 0
        assert len(load_dataset(out / "dataset.json")) == 3

    def test_set_overrides_nested(self, tmp_path):
        cfg, out = make_config(tmp_path)
        args = ["simulate", "--config", str(cfg), "--set", "scene.background_objects=0"]
        assert main(args) == 0
        assert (out / "dataset.json").exists()

    def test_set_rejects_unknown_scene_field(self, tmp_path, capsys):
        cfg, _ = make_config(tmp_path)
        args = ["simulate", "--config", str(cfg), "--set", "scene.n_cluters=4"]
        assert main(args) == 2
        assert "unknown scene fields" in capsys.readouterr().err

    def test_seed_flag_changes_dataset(self, tmp_path):
        cfg, out = make_config(tmp_path)
        assert main(["simulate", "--config", str(cfg), "--seed", "1"]) == 0
        first = (out / "dataset.json").read_bytes()
        assert main(["simulate", "--config", str(cfg), "--seed", "2"]) == 0
        second = (out / "dataset.json").read_bytes()
        assert main(["simulate", "--config", str(cfg), "--seed", "1"]) == 0
        again = (out / "dataset.json").read_bytes()
        assert first != second
        assert first == again

    def test_topn_flag_renames_outputs(self, tmp_path):
        cfg, out = make_config(tmp_path)
        assert main(["plan", "--config", str(cfg), "--topn", "5"]) == 0
        assert (out / "plans_clusdet_top5.json").exists()

    def test_strategy_flag(self, tmp_path):
        cfg, out = make_config(tmp_path)
        assert main(["plan", "--config", str(cfg), "--strategy", "eip"]) == 0
        assert (out / "plans_eip_2x3.json").exists()

    def test_out_flag(self, tmp_path):
        cfg, _ = make_config(tmp_path)
        other = tmp_path / "elsewhere"
        assert main(["simulate", "--config", str(cfg), "--out", str(other)]) == 0
        assert (other / "dataset.json").exists()


class TestCompareAndReport:
    def test_compare_tabulates_strategies(self, tmp_path, capsys):
        cfg, out = make_config(
            tmp_path,
            strategies=[
                {"name": "global_only"},
                {"name": "eip", "rows": 2, "cols": 3},
                {"name": "clusdet", "topn": 3},
            ],
        )
        assert main(["compare", "--config", str(cfg)]) == 0
        stdout = capsys.readouterr().out
        for label in ("global_only", "eip(2x3)", "clusdet(topn=3)"):
            assert label in stdout
        payload = json.loads((out / "compare.json").read_text())
        assert [e["strategy"] for e in payload["strategies"]] == [
            "global_only",
            "eip(2x3)",
            "clusdet(topn=3)",
        ]
        assert (out / "compare.txt").read_text() == stdout

    def test_topn_sweep(self, tmp_path, capsys):
        cfg, out = make_config(tmp_path)
        assert main(["compare", "--config", str(cfg), "--topn", "2,4"]) == 0
        stdout = capsys.readouterr().out
        assert "topn" in stdout
        sweep = json.loads((out / "sweep.json").read_text())
        assert [row["topn"] for row in sweep["sweep"]] == [2, 4]
        assert all("images_forwarded" in row for row in sweep["sweep"])
        # each sweep point ran through the normal stage files
        assert (out / "final_clusdet_top2.json").exists()
        assert (out / "final_clusdet_top4.json").exists()

    def test_sweep_range_syntax(self, tmp_path):
        cfg, out = make_config(tmp_path)
        assert main(["compare", "--config", str(cfg), "--topn", "1..3"]) == 0
        sweep = json.loads((out / "sweep.json").read_text())
        assert [row["topn"] for row in sweep["sweep"]] == [1, 2, 3]

    def test_sweep_requires_clusdet_family(self, tmp_path, capsys):
        cfg, _ = make_config(tmp_path, strategy={"name": "global_only"})
        assert main(["compare", "--config", str(cfg), "--topn", "1..2"]) == 2
        assert "clusdet" in capsys.readouterr().err

    def test_sweep_rejects_nonpositive(self, tmp_path, capsys):
        cfg, _ = make_config(tmp_path)
        assert main(["compare", "--config", str(cfg), "--topn", "0..2"]) == 2
        assert "positive" in capsys.readouterr().err

    def test_report_outputs(self, tmp_path, capsys):
        cfg, out = make_config(tmp_path)
        assert main(["report", "--config", str(cfg)]) == 0
        assert "clustered" in capsys.readouterr().out

        with open(out / "report_clusdet_top3.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["chip_type"] for r in rows] == ["sparse", "common", "clustered", "zero"]
        named = {r["chip_type"]: r for r in rows}
        counts = {name: int(r["count"]) for name, r in named.items()}
        # zero-detection chips are a sub-bucket of sparse
        assert counts["zero"] <= counts["sparse"]
        total = sum(counts[n] for n in ("sparse", "common", "clustered"))
        fractions = sum(float(named[n]["fraction"]) for n in ("sparse", "common", "clustered"))
        assert total > 0
        assert fractions == pytest.approx(1.0, abs=1e-5)

        svg = ET.parse(out / "report_clusdet_top3.svg").getroot()
        assert svg.tag.endswith("svg")
        texts = [el.text for el in svg.iter() if el.tag.endswith("text")]
        assert any("clustered" in t for t in texts if t)

    def test_compare_rerun_is_byte_identical(self, tmp_path):
        cfg, _ = make_config(
            tmp_path,
            strategies=[
                {"name": "global_only"},
                {"name": "eip", "rows": 2, "cols": 3},
                {"name": "clusdet", "topn": 3},
            ],
        )
        out_a = tmp_path / "run_a"
        out_b = tmp_path / "run_b"
        for out in (out_a, out_b):
            assert main(["compare", "--config", str(cfg), "--out", str(out)]) == 0
        names_a = sorted(p.name for p in out_a.iterdir())
        names_b = sorted(p.name for p in out_b.iterdir())
        assert names_a == names_b
        assert len(names_a) >= 12  # dataset + 4 files per strategy + summaries
        for name in names_a:
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name
