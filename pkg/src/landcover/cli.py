"""``landcover`` command line: one subcommand per pipeline stage, driven by a YAML config.

Exit codes: 0 success, 2 usage/config error, 3 data/schema error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from landcover import __version__
from landcover.dataset import (
    AugmentationConfig,
    LabelVocabulary,
    class_distribution,
    load_corpus,
    resize_image,
    split_corpus,
)
from landcover.evaluation import (
    DEFAULT_GRID,
    MetricsReport,
    PredictionSet,
    compute_metrics,
    render_comparison_table,
    sweep_thresholds,
)
from landcover.exceptions import CorpusLoadError, InputSizeError, SchemaError, UndefinedMetricError
from landcover.inference import (
    predict_tiles,
    read_prediction_classes,
    read_predictions,
    write_predictions,
)
from landcover.models import (
    build_model,
    get_profile,
    load_checkpoint,
    predict_probabilities,
    read_manifest,
    resolve_checkpoint,
    write_manifest,
)
from landcover.report import aggregate, emit_chart_data, format_distribution
from landcover.tiles import FetchLedger, ServiceConfig, ledger_summary, load_property_records, run_fetch_campaign
from landcover.training import TrainingConfig, detect_overfitting, export_loss_curves, train

logger = logging.getLogger("landcover")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

DEFAULTS = {
    "paths": {
        "corpus": None,
        "labels": None,
        "addresses": None,
        "cache_dir": "cache",
        "output_dir": "output",
        "checkpoint": None,
    },
    "service": {
        "base_url": "https://maps.googleapis.com/maps/api/staticmap",
        "api_key_env": "LANDCOVER_MAPS_API_KEY",
        "zoom": 18,
        "size": 640,
        "maptype": "satellite",
        "max_attempts": 3,
        "backoff_base": 0.5,
        "timeout": 30.0,
        "parallelism": 4,
        "rate_limit": 10.0,
        "column_map": {},
    },
    "training": {
        "profiles": ["tiny_cnn"],
        "epochs": 10,
        "batch_size": 32,
        "learning_rate": None,
        "seed": 0,
        "val_fraction": 0.2,
        "input_size": None,
        "pretrained": True,
        "freeze_backbone": False,
        "augment": {"horizontal_flip": True, "vertical_flip": True, "rotations": [0, 90, 180, 270]},
        "overfit_window": 2,
    },
    "evaluation": {
        "threshold": 0.5,
        "grid": None,
        "reports": [],
    },
    "inference": {
        "profile": "tiny_cnn",
        "threshold": None,
        "batch_size": 64,
    },
    "report": {
        "render_charts": False,
    },
}


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------
# config handling


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _set_dotted(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like section.key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {part} is not a section")
    node[parts[-1]] = yaml.safe_load(raw)


def load_config(path, overrides=()) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    cfg = _merge(DEFAULTS, raw)
    for assignment in overrides:
        _set_dotted(cfg, assignment)
    base = path.parent.resolve()
    for key, value in cfg["paths"].items():
        if value is not None:
            p = Path(value).expanduser()
            cfg["paths"][key] = str(p if p.is_absolute() else base / p)
    cfg["evaluation"]["reports"] = [
        str(Path(r) if Path(r).is_absolute() else base / r) for r in cfg["evaluation"].get("reports") or []
    ]
    return cfg


def _require(cfg: dict, *keys: str) -> list[Path]:
    out = []
    for key in keys:
        value = cfg["paths"].get(key)
        if value is None:
            raise ConfigError(f"paths.{key} is not set")
        if not Path(value).exists():
            raise ConfigError(f"paths.{key} does not exist: {value} (schema input missing)")
        out.append(Path(value))
    return out


def _output(cfg: dict, *parts: str) -> Path:
    p = Path(cfg["paths"]["output_dir"]).joinpath(*parts)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _digest(path: Path) -> Optional[str]:
    path = Path(path)
    if path.is_file():
        h = hashlib.sha256()
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
        return h.hexdigest()
    return None


def _write_run_manifest(cfg: dict, command: str, inputs: dict) -> Path:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config": cfg,
        "input_digests": {k: _digest(v) for k, v in inputs.items()},
    }
    path = _output(cfg, "run_manifests") / f"{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return path


def _service_config(cfg: dict) -> ServiceConfig:
    s = cfg["service"]
    return ServiceConfig(
        base_url=s["base_url"], api_key_env=s["api_key_env"], zoom=int(s["zoom"]), size=int(s["size"]),
        maptype=s["maptype"], max_attempts=int(s["max_attempts"]), backoff_base=float(s["backoff_base"]),
        timeout=float(s["timeout"]),
    )


def _checkpoint_for(cfg: dict, profile: str) -> Path:
    explicit = cfg["paths"].get("checkpoint")
    target = Path(explicit) if explicit else Path(cfg["paths"]["output_dir"]) / "checkpoints" / profile
    try:
        return resolve_checkpoint(target)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None


def _grid(cfg: dict):
    grid = cfg["evaluation"].get("grid")
    return tuple(DEFAULT_GRID if grid is None else grid)


def _validation_predictions(cfg: dict, checkpoint: Path) -> tuple[PredictionSet, dict]:
    """Re-create the validation split recorded in the checkpoint and score it."""
    corpus, labels = _require(cfg, "corpus", "labels")
    handle, manifest = load_checkpoint(checkpoint)
    vocab, images = load_corpus(corpus, labels)
    if manifest.get("class_names") and list(manifest["class_names"]) != list(vocab.classes):
        raise SchemaError(f"checkpoint vocabulary {manifest['class_names']} differs from corpus {list(vocab.classes)}")
    split = split_corpus(images, float(manifest.get("val_fraction", cfg["training"]["val_fraction"])),
                         int(manifest.get("split_seed", cfg["training"]["seed"])))
    size = int(manifest.get("input_size") or handle.profile.default_input_size)
    x = np.stack([resize_image(img.pixels, size) for img in split.val])
    y = np.stack([img.labels for img in split.val])
    probs = predict_probabilities(handle, x, batch_size=int(cfg["inference"]["batch_size"]))
    return PredictionSet(probs, y, vocab), manifest


# --------------------------------------------------------------------------
# subcommands


def cmd_prepare_data(cfg: dict) -> dict:
    corpus, labels = _require(cfg, "corpus", "labels")
    vocab, images = load_corpus(corpus, labels)
    counts = class_distribution(images, vocab)
    out = _output(cfg, "data")
    with open(out / "class_distribution.csv", "w") as fh:
        fh.write("class,count\n")
        for name, count in counts.items():
            fh.write(f"{name},{count}\n")
    missing = vocab.missing()
    summary = {"n_images": len(images), "n_classes": vocab.size, "classes": list(vocab.classes),
               "counts": counts, "missing_report_classes": missing}
    (out / "corpus_summary.json").write_text(json.dumps(summary, indent=2))
    print(f"{len(images)} images, {vocab.size} classes")
    for name, count in counts.items():
        print(f"  {name:<16} {count}")
    if missing:
        logger.warning("vocabulary lacks classes used in buyout reports: %s", ", ".join(missing))
    _write_run_manifest(cfg, "prepare-data", {"labels": labels})
    return summary


def cmd_fetch(cfg: dict) -> FetchLedger:
    (addresses,) = _require(cfg, "addresses")
    records = load_property_records(addresses, cfg["service"].get("column_map") or {})
    ledger = run_fetch_campaign(
        records, _service_config(cfg), cfg["paths"]["cache_dir"],
        parallelism=int(cfg["service"]["parallelism"]), rate_limit=float(cfg["service"]["rate_limit"]),
    )
    summary = ledger_summary(ledger)
    (_output(cfg, "fetch") / "fetch_summary.json").write_text(json.dumps(summary, indent=2))
    print(f"{summary['retrieved']} retrieved, {summary['failed']} failed of {summary['total']} addresses")
    for reason, n in summary["by_reason"].items():
        print(f"  {reason:<24} {n}")
    _write_run_manifest(cfg, "fetch", {"addresses": addresses})
    return ledger


def cmd_train(cfg: dict) -> list:
    corpus, labels = _require(cfg, "corpus", "labels")
    t = cfg["training"]
    vocab, images = load_corpus(corpus, labels)
    split = split_corpus(images, float(t["val_fraction"]), int(t["seed"]))
    aug = AugmentationConfig(**t["augment"]) if t.get("augment") else AugmentationConfig.disabled()
    histories, summary = [], {}
    for name in t["profiles"]:
        profile = get_profile(name)
        config = TrainingConfig(
            epochs=int(t["epochs"]), batch_size=int(t["batch_size"]), learning_rate=t["learning_rate"],
            seed=int(t["seed"]), input_size=t["input_size"], freeze_backbone=bool(t["freeze_backbone"]),
            checkpoint_dir=_output(cfg, "checkpoints", profile.name),
        )
        handle = build_model(profile, vocab.size, pretrained=bool(t["pretrained"]) and profile.pretrained_available,
                             seed=int(t["seed"]), class_names=vocab.classes)
        history = train(handle, split, config, aug)
        histories.append(history)
        summary[profile.name] = {
            "input_size": handle.input_size,
            "pretrained": handle.pretrained,
            "best_epoch": history.best_epoch,
            "overfitting_onset": detect_overfitting(history, int(t["overfit_window"])),
            "checkpoint": str(history.checkpoint_path),
        }
    export_loss_curves(histories, _output(cfg, "training") / "loss_curves.csv")
    (_output(cfg, "training") / "training_summary.json").write_text(json.dumps(summary, indent=2))
    _write_run_manifest(cfg, "train", {"labels": labels})
    return histories


def cmd_evaluate(cfg: dict) -> list[MetricsReport]:
    out = _output(cfg, "evaluation")
    reports = []
    ckpt_root = Path(cfg["paths"]["output_dir"]) / "checkpoints"
    profiles = [p for p in cfg["training"]["profiles"] if (ckpt_root / p / "model.pt").is_file()]
    for name in profiles:
        checkpoint = resolve_checkpoint(ckpt_root / name)
        preds, manifest = _validation_predictions(cfg, checkpoint)
        threshold = manifest.get("threshold")
        threshold = float(cfg["evaluation"]["threshold"] if threshold is None else threshold)
        report = compute_metrics(preds, threshold, model_name=name)
        report.to_json(out / f"{name}.json")
        reports.append(report)
    for path in cfg["evaluation"]["reports"]:
        try:
            reports.append(MetricsReport.from_json(Path(path)))
        except (OSError, TypeError, ValueError) as exc:
            raise SchemaError(f"cannot read metrics report {path}: {exc}") from None
    if not reports:
        raise ConfigError("nothing to evaluate: no trained checkpoints and no evaluation.reports")
    text = render_comparison_table(reports, "text")
    (out / "comparison.txt").write_text(text)
    (out / "comparison.csv").write_text(render_comparison_table(reports, "csv"))
    (out / "comparison.tex").write_text(render_comparison_table(reports, "latex"))
    print(text, end="")
    _write_run_manifest(cfg, "evaluate", {f"checkpoint:{p}": ckpt_root / p / "model.pt" for p in profiles})
    return reports


def cmd_calibrate(cfg: dict):
    profile = cfg["inference"]["profile"]
    checkpoint = _checkpoint_for(cfg, profile)
    preds, _ = _validation_predictions(cfg, checkpoint)
    sweep = sweep_thresholds(preds, _grid(cfg))
    sweep.to_csv(_output(cfg, "evaluation") / f"threshold_sweep_{profile}.csv")
    manifest = read_manifest(checkpoint)
    manifest["threshold"] = sweep.best_threshold
    write_manifest(checkpoint, manifest)
    best_f1 = max(sweep.f1_at)
    print(f"{profile}: best threshold {sweep.best_threshold:.2f} (micro-F1 {best_f1:.2f})")
    _write_run_manifest(cfg, "calibrate", {"checkpoint": checkpoint})
    return sweep


def cmd_predict(cfg: dict):
    checkpoint = _checkpoint_for(cfg, cfg["inference"]["profile"])
    ledger_path = Path(cfg["paths"]["cache_dir"]) / "ledger.json"
    if not ledger_path.is_file():
        raise ConfigError(f"fetch ledger not found: {ledger_path}")
    ledger = FetchLedger.load(ledger_path)
    skipped: list = []
    records = predict_tiles(checkpoint, cfg["paths"]["cache_dir"], ledger, cfg["inference"]["threshold"],
                            batch_size=int(cfg["inference"]["batch_size"]), skipped=skipped)
    manifest = read_manifest(checkpoint)
    classes = manifest.get("class_names") or [f"label{i}" for i in range(int(manifest["num_labels"]))]
    out = _output(cfg, "predictions")
    write_predictions(records, out / "predictions", classes)
    (out / "skipped.json").write_text(json.dumps([s.__dict__ for s in skipped], indent=2))
    print(f"{len(records)} tiles classified, {len(skipped)} skipped")
    _write_run_manifest(cfg, "predict", {"checkpoint": checkpoint, "ledger": ledger_path})
    return records


def cmd_report(cfg: dict):
    pred_base = Path(cfg["paths"]["output_dir"]) / "predictions" / "predictions"
    if not pred_base.with_suffix(".json").is_file():
        raise ConfigError(f"predictions not found: {pred_base.with_suffix('.json')}")
    records = read_predictions(pred_base.with_suffix(".json"))
    vocab = LabelVocabulary(tuple(read_prediction_classes(pred_base.with_suffix(".csv"))))
    dist = aggregate(records, vocab)
    paths = emit_chart_data(dist, _output(cfg, "report"), render=bool(cfg["report"]["render_charts"]))
    print(format_distribution(dist))
    _write_run_manifest(cfg, "report", {"predictions": pred_base.with_suffix(".json")})
    return dist, paths


COMMANDS = {
    "prepare-data": cmd_prepare_data,
    "fetch": cmd_fetch,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "calibrate": cmd_calibrate,
    "predict": cmd_predict,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="landcover", description="Land-cover classification pipeline for satellite tiles.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="YAML pipeline config")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--profile", help="shortcut for inference.profile (and training.profiles for train)")
        p.add_argument("--threshold", type=float, help="shortcut for inference.threshold")
        p.add_argument("--epochs", type=int, help="shortcut for training.epochs")
        p.add_argument("--render-charts", action="store_true", help="also render PNG charts (report)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _apply_shortcuts(args, cfg: dict) -> None:
    if args.profile:
        cfg["inference"]["profile"] = args.profile
        if args.command == "train":
            cfg["training"]["profiles"] = [args.profile]
    if args.threshold is not None:
        cfg["inference"]["threshold"] = args.threshold
    if args.epochs is not None:
        cfg["training"]["epochs"] = args.epochs
    if args.render_charts:
        cfg["report"]["render_charts"] = True


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stdout, level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        cfg = load_config(args.config, args.overrides)
        _apply_shortcuts(args, cfg)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, CorpusLoadError, InputSizeError, UndefinedMetricError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        logger.debug("failure", exc_info=True)
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
