"""File-driven batch front end.

Stages communicate exclusively through JSON files in the run's output
directory, so any stage can be rerun, inspected, or replaced (e.g. the
detect stage by a real detector runner) independently:

    dataset.json                     simulate
    plans_<strategy>.json            plan
    chip_dets_<strategy>.json        detect (chip-local frames)
    final_<strategy>.json            fuse   (COCO results format)
    eval_<strategy>.json             eval
    compare.json / compare.txt       compare
    sweep.json                       compare --topn A..B
    report_<strategy>.{csv,svg}      report

Every stage rewrites its outputs deterministically: fixed PRNG streams,
stable orderings, and fixed decimal formatting make reruns
byte-identical. Missing inputs are produced on demand through the same
code paths. The config is one JSON document; --set key=value overrides
individual entries with dotted paths, and the top-level "seed" feeds
both the scene generator and the detector unless those sections pin
their own.

The CLUSTILE_LOG environment variable (debug|info|warning|error) sets
the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

from .errors import ClustileError, ConfigError
from .evaluation import (
    ChipTypeHistogram,
    ChipTypeParams,
    EvalParams,
    EvalResult,
    chip_type_histogram,
    coco_ap,
    count_forwarded,
    text_table,
)
from .fusion import FusionParams
from .pipeline import (
    ImagePlan,
    StrategySpec,
    detect_plans,
    fuse_image,
    load_chip_detections,
    load_plans,
    plan_image,
    save_chip_detections,
    save_plans,
)
from .records import (
    ImageRecord,
    load_dataset,
    load_detections,
    save_dataset,
    save_detections,
    write_json_atomic,
)
from .simulator import DetectorModel, SceneParams, generate_batch

__all__ = ["main"]

logger = logging.getLogger(__name__)


def _setup_logging() -> None:
    level = os.environ.get("CLUSTILE_LOG", "warning").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        raise ConfigError(f"CLUSTILE_LOG must be a log level name, got {level!r}")
    logging.basicConfig(level=getattr(logging, level), stream=sys.stderr)


def _parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _apply_override(cfg: dict, dotted: str) -> None:
    if "=" not in dotted:
        raise ConfigError(f"--set expects key=value, got {dotted!r}")
    path, raw = dotted.split("=", 1)
    keys = path.split(".")
    node = cfg
    for key in keys[:-1]:
        nxt = node.get(key)
        if not isinstance(nxt, dict):
            nxt = {}
            node[key] = nxt
        node = nxt
    node[keys[-1]] = _parse_override_value(raw)


@dataclass(frozen=True)
class Run:
    """A fully resolved configuration."""

    out: Path
    seed: int
    n_images: int
    first_image_id: int
    scene: SceneParams | None
    dataset_path: Path | None
    model: DetectorModel
    spec: StrategySpec
    specs: tuple[StrategySpec, ...]
    fusion: FusionParams
    eval_params: EvalParams
    chip_types: ChipTypeParams
    jobs: int

    def dataset_file(self) -> Path:
        return self.dataset_path or self.out / "dataset.json"

    def plans_file(self, spec: StrategySpec) -> Path:
        return self.out / f"plans_{_slug(spec)}.json"

    def chip_dets_file(self, spec: StrategySpec) -> Path:
        return self.out / f"chip_dets_{_slug(spec)}.json"

    def final_file(self, spec: StrategySpec) -> Path:
        return self.out / f"final_{_slug(spec)}.json"

    def eval_file(self, spec: StrategySpec) -> Path:
        return self.out / f"eval_{_slug(spec)}.json"


def _slug(spec: StrategySpec) -> str:
    if spec.name == "eip":
        return f"eip_{spec.rows}x{spec.cols}"
    if spec.name in ("clusdet", "clusdet_no_scalenet"):
        return f"{spec.name}_top{spec.topn}"
    return spec.name


def _build_run(args: argparse.Namespace) -> Run:
    cfg_path = Path(args.config)
    if not cfg_path.exists():
        raise ConfigError(f"config file not found: {cfg_path}")
    try:
        cfg = json.loads(cfg_path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{cfg_path}: malformed JSON at line {exc.lineno}, column {exc.colno}"
        ) from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{cfg_path}: config must be a JSON object")

    for item in args.set or []:
        _apply_override(cfg, item)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    if args.strategy is not None:
        cfg.setdefault("strategy", {})["name"] = args.strategy
    topn = getattr(args, "topn", None)
    if _is_sweep(topn) and args.command != "compare":
        raise ConfigError("--topn sweeps (A..B or comma lists) only apply to compare")
    if topn is not None and not _is_sweep(topn):
        cfg.setdefault("strategy", {})["topn"] = int(topn)
    if args.jobs is not None:
        cfg["jobs"] = args.jobs

    if "out" not in cfg:
        raise ConfigError("config needs an 'out' output directory (or pass --out)")
    seed = int(cfg.get("seed", 0))

    scene = None
    if "scene" in cfg:
        scene_cfg = dict(cfg["scene"])
        scene_cfg.setdefault("seed", seed)
        scene = SceneParams.from_json(scene_cfg)

    detector_cfg = dict(cfg.get("detector", {}))
    detector_cfg.setdefault("seed", seed)
    model = DetectorModel.from_json(detector_cfg)

    spec = StrategySpec.from_json(cfg.get("strategy", {"name": "clusdet"}))
    raw_specs = cfg.get("strategies")
    specs = (
        tuple(StrategySpec.from_json(s) for s in raw_specs) if raw_specs else (spec,)
    )

    def section(name: str, cls: Any) -> Any:
        payload = dict(cfg.get(name, {}))
        if name == "eval" and "iou_thresholds" in payload:
            payload["iou_thresholds"] = tuple(payload["iou_thresholds"])
        if name == "eval" and "size_buckets" in payload:
            payload["size_buckets"] = tuple(payload["size_buckets"])
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigError(f"bad '{name}' config: {exc}") from exc

    return Run(
        out=Path(cfg["out"]),
        seed=seed,
        n_images=int(cfg.get("n_images", 20)),
        first_image_id=int(cfg.get("first_image_id", 1)),
        scene=scene,
        dataset_path=Path(cfg["dataset"]) if cfg.get("dataset") else None,
        model=model,
        spec=spec,
        specs=specs,
        fusion=section("fusion", FusionParams),
        eval_params=section("eval", EvalParams),
        chip_types=section("chip_types", ChipTypeParams),
        jobs=int(cfg.get("jobs", 1)),
    )


# ---------------------------------------------------------------- stages


def _ensure_dataset(run: Run) -> list[ImageRecord]:
    path = run.dataset_file()
    if path.exists():
        return load_dataset(path)
    if run.scene is None:
        raise ConfigError(
            f"dataset file {path} does not exist and the config has no 'scene' "
            "section to simulate one from"
        )
    run.out.mkdir(parents=True, exist_ok=True)
    images = generate_batch(run.scene, run.n_images, run.first_image_id)
    save_dataset(images, path)
    logger.info("simulated %d images into %s", len(images), path)
    return images


def _plan_worker(payload: tuple[ImageRecord, StrategySpec, DetectorModel]) -> ImagePlan:
    image, spec, model = payload
    return plan_image(image, spec, model)


def _detect_worker(
    payload: tuple[ImageRecord, ImagePlan, DetectorModel],
) -> tuple[int, dict]:
    image, plan, model = payload
    return image.image_id, detect_plans(image, plan, model)


def _map_jobs(run: Run, worker: Any, payloads: list) -> list:
    if run.jobs <= 1 or len(payloads) <= 1:
        return [worker(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=run.jobs) as pool:
        return list(pool.map(worker, payloads, chunksize=4))


def _stage_plan(run: Run, spec: StrategySpec, images: list[ImageRecord]) -> dict[int, ImagePlan]:
    plans = {
        plan.image_id: plan
        for plan in _map_jobs(run, _plan_worker, [(img, spec, run.model) for img in images])
    }
    run.out.mkdir(parents=True, exist_ok=True)
    save_plans(plans, run.plans_file(spec))
    return plans


def _ensure_plans(run: Run, spec: StrategySpec, images: list[ImageRecord]) -> dict[int, ImagePlan]:
    path = run.plans_file(spec)
    if path.exists():
        return load_plans(path)
    return _stage_plan(run, spec, images)


def _stage_detect(
    run: Run, spec: StrategySpec, images: list[ImageRecord], plans: dict[int, ImagePlan]
) -> dict[int, dict[str, list]]:
    payloads = [(img, plans[img.image_id], run.model) for img in images]
    raw = dict(_map_jobs(run, _detect_worker, payloads))
    save_chip_detections(raw, run.chip_dets_file(spec))
    return raw


def _ensure_chip_dets(
    run: Run, spec: StrategySpec, images: list[ImageRecord], plans: dict[int, ImagePlan]
) -> dict[int, dict[str, list]]:
    path = run.chip_dets_file(spec)
    if path.exists():
        return load_chip_detections(path)
    return _stage_detect(run, spec, images, plans)


def _stage_fuse(
    run: Run,
    spec: StrategySpec,
    plans: dict[int, ImagePlan],
    raw: dict[int, dict[str, list]],
) -> dict[int, list]:
    final = {
        image_id: fuse_image(plans[image_id], raw.get(image_id, {}), run.fusion)
        for image_id in sorted(plans)
    }
    save_detections(final, run.final_file(spec))
    return final


def _ensure_final(
    run: Run,
    spec: StrategySpec,
    images: list[ImageRecord],
    plans: dict[int, ImagePlan],
) -> dict[int, list]:
    path = run.final_file(spec)
    if path.exists():
        return load_detections(path)
    raw = _ensure_chip_dets(run, spec, images, plans)
    return _stage_fuse(run, spec, plans, raw)


def _stage_eval(
    run: Run,
    spec: StrategySpec,
    images: list[ImageRecord],
    plans: dict[int, ImagePlan],
    final: dict[int, list],
) -> EvalResult:
    result = coco_ap(final, images, run.eval_params).with_forwarded(
        count_forwarded({i: p.chips for i, p in plans.items()})
    )
    write_json_atomic(
        {"strategy": spec.label, "spec": spec.to_json(), "result": result.to_json()},
        run.eval_file(spec),
    )
    return result


def _run_all_stages(run: Run, spec: StrategySpec, images: list[ImageRecord]) -> EvalResult:
    plans = _ensure_plans(run, spec, images)
    final = _ensure_final(run, spec, images, plans)
    return _stage_eval(run, spec, images, plans, final)


# ---------------------------------------------------------------- commands


def cmd_simulate(args: argparse.Namespace) -> int:
    run = _build_run(args)
    if run.scene is None:
        raise ConfigError("simulate requires a 'scene' section in the config")
    run.out.mkdir(parents=True, exist_ok=True)
    images = generate_batch(run.scene, run.n_images, run.first_image_id)
    save_dataset(images, run.dataset_file())
    print(f"wrote {len(images)} images to {run.dataset_file()}")
    return 0


def cmd_plan(args: argparse.Namespace) -> int:
    run = _build_run(args)
    images = _ensure_dataset(run)
    plans = _stage_plan(run, run.spec, images)
    n_chips = sum(len(p.chips) for p in plans.values())
    print(
        f"planned {n_chips} chips over {len(plans)} images "
        f"({n_chips / max(len(plans), 1):.2f}/image) -> {run.plans_file(run.spec)}"
    )
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    run = _build_run(args)
    images = _ensure_dataset(run)
    plans = _ensure_plans(run, run.spec, images)
    raw = _stage_detect(run, run.spec, images, plans)
    n = sum(len(d) for per_image in raw.values() for d in per_image.values())
    print(f"detected {n} chip-local boxes -> {run.chip_dets_file(run.spec)}")
    return 0


def cmd_fuse(args: argparse.Namespace) -> int:
    run = _build_run(args)
    images = _ensure_dataset(run)
    plans = _ensure_plans(run, run.spec, images)
    raw = _ensure_chip_dets(run, run.spec, images, plans)
    final = _stage_fuse(run, run.spec, plans, raw)
    n = sum(len(d) for d in final.values())
    print(f"fused {n} detections -> {run.final_file(run.spec)}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    run = _build_run(args)
    images = _ensure_dataset(run)
    plans = _ensure_plans(run, run.spec, images)
    final = _ensure_final(run, run.spec, images, plans)
    result = _stage_eval(run, run.spec, images, plans, final)
    print(text_table({run.spec.label: result}), end="")
    return 0


def _is_sweep(raw: str | None) -> bool:
    return raw is not None and (".." in raw or "," in raw)


def _parse_sweep(raw: str) -> list[int]:
    if ".." in raw:
        lo, hi = raw.split("..", 1)
        values = list(range(int(lo), int(hi) + 1))
    else:
        values = [int(v) for v in raw.split(",")]
    if not values or any(v < 1 for v in values):
        raise ConfigError(f"--topn sweep must be positive integers, got {raw!r}")
    return values


def cmd_compare(args: argparse.Namespace) -> int:
    run = _build_run(args)
    images = _ensure_dataset(run)

    if _is_sweep(getattr(args, "topn", None)):
        if run.spec.name not in ("clusdet", "clusdet_no_scalenet"):
            raise ConfigError("--topn sweeps require a clusdet-family strategy")
        rows = []
        for topn in _parse_sweep(args.topn):
            spec = replace(run.spec, topn=topn)
            result = _run_all_stages(run, spec, images)
            rows.append(
                {
                    "topn": topn,
                    "images_forwarded": result.images_forwarded,
                    "ap": result.to_json()["ap"],
                    "ap50": result.to_json()["ap50"],
                }
            )
        write_json_atomic({"strategy": run.spec.name, "sweep": rows}, run.out / "sweep.json")
        print(f"{'topn':>4}  {'#img':>6}  {'AP':>6}")
        for row in rows:
            ap = "n/a" if row["ap"] is None else f"{100 * row['ap']:.1f}"
            print(f"{row['topn']:>4}  {row['images_forwarded']:>6}  {ap:>6}")
        return 0

    results: dict[str, EvalResult] = {}
    entries = []
    for spec in run.specs:
        result = _run_all_stages(run, spec, images)
        results[spec.label] = result
        entries.append(
            {"strategy": spec.label, "spec": spec.to_json(), "result": result.to_json()}
        )
    table = text_table(results)
    write_json_atomic({"strategies": entries}, run.out / "compare.json")
    compare_txt = run.out / "compare.txt"
    tmp = compare_txt.with_name(compare_txt.name + ".tmp")
    tmp.write_text(table)
    tmp.replace(compare_txt)
    print(table, end="")
    return 0


def _histogram_csv(hist: ChipTypeHistogram) -> str:
    lines = ["chip_type,count,fraction"]
    for name, count, frac in (
        ("sparse", hist.sparse, hist.sparse_fraction),
        ("common", hist.common, hist.common_fraction),
        ("clustered", hist.clustered, hist.clustered_fraction),
        ("zero", hist.zero, hist.zero_fraction),
    ):
        lines.append(f"{name},{count},{frac:.6f}")
    return "\n".join(lines) + "\n"


def _histogram_svg(hist: ChipTypeHistogram, title: str) -> str:
    bars = (
        ("sparse", hist.sparse_fraction, "#7aa6c2"),
        ("common", hist.common_fraction, "#e0b55a"),
        ("clustered", hist.clustered_fraction, "#c86b5a"),
        ("zero", hist.zero_fraction, "#9a9a9a"),
    )
    width, height, base, top = 480, 320, 260, 60
    slot = width / len(bars)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="28" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
        f'<line x1="24" y1="{base}" x2="{width - 24}" y2="{base}" stroke="#444"/>',
    ]
    for i, (name, frac, color) in enumerate(bars):
        h = frac * (base - top)
        x = i * slot + slot * 0.25
        w = slot * 0.5
        parts.append(
            f'<rect x="{x:.1f}" y="{base - h:.1f}" width="{w:.1f}" height="{h:.1f}" '
            f'fill="{color}"/>'
        )
        parts.append(
            f'<text x="{x + w / 2:.1f}" y="{base - h - 6:.1f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{100 * frac:.1f}%</text>'
        )
        parts.append(
            f'<text x="{x + w / 2:.1f}" y="{base + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_report(args: argparse.Namespace) -> int:
    run = _build_run(args)
    images = _ensure_dataset(run)
    plans = _ensure_plans(run, run.spec, images)
    hist = chip_type_histogram(
        {i: p.chips for i, p in plans.items()}, images, run.chip_types
    )
    slug = _slug(run.spec)
    csv_path = run.out / f"report_{slug}.csv"
    svg_path = run.out / f"report_{slug}.svg"
    for path, text in ((csv_path, _histogram_csv(hist)),
                       (svg_path, _histogram_svg(hist, f"chip types: {run.spec.label}"))):
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text)
        tmp.replace(path)
    print(
        f"{hist.total} chips: {100 * hist.sparse_fraction:.1f}% sparse "
        f"(incl. {100 * hist.zero_fraction:.1f}% empty), "
        f"{100 * hist.common_fraction:.1f}% common, "
        f"{100 * hist.clustered_fraction:.1f}% clustered -> {csv_path}, {svg_path}"
    )
    return 0


# ---------------------------------------------------------------- parser


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="path to the JSON run config")
    sub.add_argument("--seed", type=int, help="override the config seed")
    sub.add_argument("--out", help="override the output directory")
    sub.add_argument(
        "--strategy",
        choices=("global_only", "eip", "clusdet", "clusdet_no_scalenet"),
        help="override strategy.name",
    )
    sub.add_argument("--jobs", type=int, help="worker processes for per-image stages")
    sub.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override a config entry by dotted path, e.g. scene.n_clusters=5",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clustile",
        description="cluster-aware chip planning, simulated detection, fusion and evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "simulate": (cmd_simulate, "generate a synthetic dataset"),
        "plan": (cmd_plan, "plan chips for every image"),
        "detect": (cmd_detect, "run the simulated detector on planned chips"),
        "fuse": (cmd_fuse, "merge chip and whole-image detections"),
        "eval": (cmd_eval, "score final detections against the dataset"),
        "compare": (cmd_compare, "run and tabulate several strategies"),
        "report": (cmd_report, "chip-type histogram as CSV and SVG"),
    }
    for name, (func, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name in ("plan", "detect", "fuse", "eval", "compare", "report"):
            p.add_argument(
                "--topn",
                help="override strategy.topn; compare accepts sweeps like 1..8 or 2,4,6",
            )
        p.set_defaults(func=func)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except ClustileError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
