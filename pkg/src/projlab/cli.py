"""Command-line entry point.

Every command reads one config file, writes its outputs into ``--out`` and
finishes with ``manifest.json`` (command, arguments, merged config, seed, tool
version, output list).  Wall-clock time goes to ``timing.txt`` so that the
JSON outputs of two identical runs are byte-identical.

Exit codes: 0 success, 2 usage or config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__, attack, config, countermeasure, detector, imaging, scene
from .analysis import studies
from .channel import capture
from .rng import RngStream, derive_stream_id

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
LINEAR_DEFAULTS = {"n": 200, "epochs": 2000, "lr": 1.0}


class UsageError(Exception):
    """Bad arguments or config detected before any work starts."""


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


class Outputs:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def text(self, name: str, content: str) -> None:
        (self.root / name).write_bytes(content.encode("utf-8"))
        self.files.append(name)

    def json(self, name: str, obj) -> None:
        self.text(name, _json(obj))

    def ppm(self, name: str, img) -> None:
        imaging.write_ppm(self.root / name, img)
        self.files.append(name)

    def binary(self, name: str, writer) -> None:
        writer(self.root / name)
        self.files.append(name)


# --------------------------------------------------------------------------
# Builders


def build_detector(kind: str, settings: dict, seed: int):
    if settings.get("model"):
        path = settings["model"]
        if kind == "template":
            return detector.TemplateDetector(detector.TemplateDetectorModel.load(path))
        return detector.LinearDetector([detector.LinearDetectorModel.load(path)])
    thr = settings.get("detection_threshold")
    thr_kw = {} if thr is None else {"detection_threshold": float(thr)}
    if kind == "template":
        kw = {k: float(settings[k]) for k in ("slope", "offset") if settings.get(k) is not None}
        return detector.TemplateDetector(detector.build_template_model(**kw), **thr_kw)
    lin = {**LINEAR_DEFAULTS, **(settings.get("linear") or {})}
    det = detector.train_default_linear_detector(n=int(lin["n"]), seed=seed, epochs=int(lin["epochs"]), lr=float(lin["lr"]))
    if thr is not None:
        det.detection_threshold = float(thr)
    return det


def _detector(cfg: dict):
    settings = config.detector_settings(cfg)
    return build_detector(settings["kind"], settings, config.root_seed(cfg))


# --------------------------------------------------------------------------
# Commands


def cmd_attack(cfg: dict, args, out: Outputs) -> dict:
    scenario = args.scenario
    scene_cfg = config.scene_config(cfg)
    channel = config.channel_params(cfg)
    det = _detector(cfg)
    if scenario == "PL-PA":
        trace, (record,) = attack.run_papla(scene_cfg, det, config.physical_attack(cfg), channel)
    else:
        dcfg = config.digital_attack(cfg)
        trace = attack.run_dl_da(scene_cfg, det, dcfg)
        if scenario == "DL-DA":
            record = attack.dl_da_record(scene_cfg, det, dcfg, trace)
        else:
            record = attack.run_dl_pa(scene_cfg, det, dcfg, channel, dl_da=trace)
    out.json("trace.json", trace.to_dict())
    out.ppm("patch.ppm", trace.final_patch.raster)
    out.json("record.json", record.to_dict())
    return {"scenario": scenario, "reduction_pct": record.reduction_pct}


def cmd_sweep(cfg: dict, args, out: Outputs) -> dict:
    levels = config.section(cfg, "sweep").get("levels")
    grid, anovas = studies.run_factor_sweep(
        config.scene_config(cfg),
        config.channel_params(cfg),
        _detector(cfg),
        config.physical_attack(cfg),
        levels=levels,
        seed=config.root_seed(cfg),
        jobs=args.jobs,
    )
    out.text("grid.csv", grid.to_csv())
    out.text("box.csv", grid.box_csv())
    out.json("anova.json", {f: a.to_dict() for f, a in anovas.items()})
    return {"cells": len(grid.cells)}


def _suite_records(cfg: dict, scenarios) -> list:
    suite = config.section(cfg, "suite")
    return attack.run_scenario_suite(
        config.suite_scenes(cfg),
        tuple(scenarios),
        _detector(cfg),
        config.digital_attack(cfg),
        config.physical_attack(cfg),
        config.channel_params(cfg),
        views=tuple(suite.get("views", ("mono", "stereo"))),
    )


def cmd_norms(cfg: dict, args, out: Outputs) -> dict:
    scenarios = config.section(cfg, "suite").get("scenarios", attack.SCENARIOS)
    records = _suite_records(cfg, scenarios)
    averages = studies.run_norms_comparison(records)
    out.text("norms.csv", studies.norms_csv(averages))
    out.json("records.json", [r.to_dict() for r in records])
    return {"records": len(records)}


def cmd_surface(cfg: dict, args, out: Outputs) -> dict:
    sec = config.section(cfg, "surface")
    albedos = sec.get("albedos", [[v] * 3 for v in (0.0, 0.1, 0.3, 0.5, 0.7, 0.9)])
    results = studies.run_surface_study(
        albedos,
        config.scene_config(cfg),
        config.channel_params(cfg),
        _detector(cfg),
        config.physical_attack(cfg),
        repeats=int(sec.get("repeats", 3)),
        seed=config.root_seed(cfg),
        jobs=args.jobs,
    )
    out.text("surface.csv", studies.surface_csv(results))
    return {"albedos": len(results)}


def cmd_transfer(cfg: dict, args, out: Outputs) -> dict:
    sec = config.section(cfg, "transfer")
    kinds = list(sec.get("detectors", ["template", "linear"]))
    if len(kinds) < 2:
        raise UsageError("transfer needs at least two detectors")
    seed = config.root_seed(cfg)
    base = config.detector_settings(cfg)
    dets = {}
    for k in kinds:
        name = k if isinstance(k, str) else k.get("name", k.get("kind"))
        spec = {**base, "model": None, **({"kind": k} if isinstance(k, str) else k)}
        if name in dets:
            raise UsageError(f"duplicate detector name {name!r}")
        dets[name] = build_detector(spec["kind"], spec, seed)
    cells, averages = studies.run_transfer_matrix(
        config.suite_scenes(cfg),
        sec.get("methods", list(attack.METHODS)),
        dets,
        scenarios=tuple(sec.get("scenarios", ("DL-DA", "PL-PA"))),
        digital_cfg=config.digital_attack(cfg),
        physical_cfg=config.physical_attack(cfg),
        channel=config.channel_params(cfg),
        seed=seed,
        jobs=args.jobs,
        method_overrides=sec.get("method_overrides"),
    )
    out.text("transfer.csv", studies.transfer_csv(cells))
    out.json("averages.json", [{"method": m, "scenario": s, "mean_conf_diff_pct": v} for (m, s), v in averages.items()])
    return {"cells": len(cells)}


def _ranges(sec: dict) -> countermeasure.VariationRanges:
    fields = countermeasure.VariationRanges.__dataclass_fields__
    raw = sec.get("ranges") or {}
    unknown = set(raw) - set(fields)
    if unknown:
        raise UsageError(f"unknown countermeasure ranges: {sorted(unknown)}")
    return countermeasure.VariationRanges(**{k: (v if k == "patch_side" else tuple(v)) for k, v in raw.items()})


def _dataset(cfg: dict, sec: dict, which: str):
    if sec.get(f"{which}_dataset"):
        return countermeasure.read_dataset(sec[f"{which}_dataset"])
    seed = config.root_seed(cfg)
    rng = RngStream(seed, derive_stream_id(seed, "countermeasure", which))
    return countermeasure.generate_dataset(
        int(sec["n_patched"]), int(sec["n_unpatched"]), _ranges(sec), rng, config.channel_params(cfg)
    )


def _model_path(args, sec: dict) -> str:
    path = args.model or sec.get("model")
    if not path:
        raise UsageError("a classifier model is required (--model or countermeasure.model)")
    if not Path(path).is_file():
        raise UsageError(f"model file not found: {path}")
    return path


def cmd_countermeasure(cfg: dict, args, out: Outputs) -> dict:
    sec = config.countermeasure_settings(cfg)
    seed = config.root_seed(cfg)
    if args.verb == "train":
        frames = _dataset(cfg, sec, "train")
        model = countermeasure.train_classifier(
            frames,
            epochs_max=int(sec["epochs_max"]),
            lr=float(sec["lr"]),
            l2_weight=float(sec["l2_weight"]),
            patience=int(sec["patience"]),
            val_split=float(sec["val_split"]),
            rng=RngStream(seed, derive_stream_id(seed, "countermeasure", "split")),
        )
        out.binary("model.pjlm", model.save)
        out.json("training.json", {"best_epoch": model.best_epoch, "epochs_run": model.epochs_run, "history": model.history})
        best = next((h for h in model.history if h["epoch"] == model.best_epoch), {})
        return {"best_epoch": model.best_epoch, "val_auc": best.get("val_auc")}
    model = countermeasure.ClassifierModel.load(_model_path(args, sec))
    if args.verb == "eval":
        report = countermeasure.evaluate(model, _dataset(cfg, sec, "test"))
        out.json("report.json", report.to_dict())
        return {"auc": report.auc, "accuracy": report.accuracy}
    # gate
    if args.image:
        img = imaging.read_ppm(args.image)
        source = str(args.image)
    else:
        scene_cfg = config.scene_config(cfg)
        rng = RngStream(seed, derive_stream_id(seed, "countermeasure", "gate"))
        img = capture(scene.render_clean(scene_cfg), config.channel_params(cfg), rng)
        source = "clean:" + scene_cfg.object_id
    score = model.score(img)
    decision = countermeasure.gate(img, model, float(sec["threshold"]))
    print(decision)
    out.json("gate.json", {"decision": decision, "score": score, "threshold": float(sec["threshold"]), "source": source})
    return {"decision": decision}


COMMANDS = {
    "attack": cmd_attack,
    "sweep": cmd_sweep,
    "norms": cmd_norms,
    "surface": cmd_surface,
    "transfer": cmd_transfer,
    "countermeasure": cmd_countermeasure,
}


# --------------------------------------------------------------------------
# Argument handling


def _common(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="YAML run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config's root seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for grid studies")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="projlab", description="Projector-based adversarial patch experiments.")
    parser.add_argument("--version", action="version", version=f"projlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", help="run one attack scenario on the base scene")
    _common(p)
    p.add_argument("--scenario", choices=("DL-DA", "DL-PA", "PL-PA"), default="PL-PA")

    for name, text in (
        ("sweep", "factor grid with per-factor ANOVA"),
        ("norms", "scenario suite and average perturbation norms"),
        ("surface", "reduction per surface albedo"),
        ("transfer", "cross-detector transfer matrix"),
    ):
        _common(sub.add_parser(name, help=text))

    p = sub.add_parser("countermeasure", help="projection-detection classifier")
    p.add_argument("verb", choices=("train", "eval", "gate"))
    _common(p)
    p.add_argument("--model", help="trained classifier (eval, gate)")
    p.add_argument("--image", help="PPM frame to gate; defaults to a seeded clean capture")

    p = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    return parser


def _run(command: str, cfg: dict, args, out_dir) -> None:
    out = Outputs(out_dir)
    start = time.perf_counter()
    summary = COMMANDS[command](cfg, args, out)
    wall = time.perf_counter() - start
    recorded = {k: getattr(args, k) for k in ("scenario", "verb", "model", "image") if getattr(args, k, None) is not None}
    out.text("timing.txt", f"wall_time_s {wall:.3f}\n")
    manifest = {
        "command": command,
        "args": recorded,
        "config": cfg,
        "seed": config.root_seed(cfg),
        "version": __version__,
        "outputs": sorted(out.files),
        "summary": summary,
    }
    (out.root / "manifest.json").write_bytes(_json(manifest).encode("utf-8"))


def _replay_args(args):
    try:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        command = manifest["command"]
        cfg = config.validate(manifest["config"])
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot replay {args.manifest}: {exc}") from exc
    if command not in COMMANDS:
        raise UsageError(f"unknown command in manifest: {command!r}")
    ns = argparse.Namespace(jobs=args.jobs, scenario=None, verb=None, model=None, image=None)
    for k, v in manifest.get("args", {}).items():
        setattr(ns, k, v)
    return command, cfg, ns


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            command, cfg, run_args = _replay_args(args)
        else:
            command, run_args = args.command, args
            if args.jobs < 1:
                raise UsageError("--jobs must be at least 1")
            cfg = config.with_seed(config.load(args.config), args.seed)
    except (config.ConfigError, UsageError) as exc:
        print(f"projlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        _run(command, cfg, run_args, args.out)
    except UsageError as exc:
        print(f"projlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every other failure maps to the runtime code
        print(f"projlab: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
