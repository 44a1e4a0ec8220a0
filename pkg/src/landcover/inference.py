"""Batch classification of cached tiles with a trained checkpoint."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from landcover._validation import check_threshold
from landcover.dataset import resize_image
from landcover.evaluation import binarize
from landcover.models import load_checkpoint, predict_probabilities
from landcover.tiles import FetchLedger

logger = logging.getLogger(__name__)

# best F1 threshold reported for the DenseNet-201 reference run
DEFAULT_THRESHOLD = 0.4


@dataclass
class PredictionRecord:
    record_id: str
    probabilities: list[float]
    decisions: list[int]
    threshold_used: float
    model_name: str


@dataclass
class SkippedTile:
    record_id: str
    reason: str


def predict_tiles(checkpoint, tile_cache, ledger: FetchLedger, threshold: Optional[float] = None,
                  batch_size: int = 64, skipped: Optional[list] = None) -> list[PredictionRecord]:
    """Classify every tile the ledger marks as retrieved.

    ``threshold`` defaults to the value calibrated into the checkpoint
    manifest. Undecodable tiles are skipped, logged, and appended to
    ``skipped`` when a list is given. Records come back sorted by id.
    """
    handle, manifest = load_checkpoint(checkpoint)
    if threshold is None:
        threshold = manifest.get("threshold")
        if threshold is None:
            logger.warning("checkpoint has no calibrated threshold; using %.2f", DEFAULT_THRESHOLD)
            threshold = DEFAULT_THRESHOLD
    threshold = check_threshold(threshold)
    size = int(manifest.get("input_size") or handle.profile.default_input_size)
    tile_cache = Path(tile_cache)

    ids, pixels = [], []
    for result in sorted(ledger.retrieved(), key=lambda r: r.record_id):
        path = Path(result.tile_path)
        if not path.is_absolute():
            path = tile_cache / path
        try:
            with Image.open(path) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except Exception as exc:
            reason = f"{type(exc).__name__}: {exc}"
            logger.warning("skipping tile %s: %s", result.record_id, reason)
            if skipped is not None:
                skipped.append(SkippedTile(result.record_id, reason))
            continue
        ids.append(result.record_id)
        pixels.append(resize_image(arr, size))

    if not ids:
        return []
    probs = predict_probabilities(handle, np.stack(pixels), batch_size=batch_size)
    decisions = binarize(probs, threshold)
    return [
        PredictionRecord(record_id=i, probabilities=[float(v) for v in p], decisions=[int(v) for v in d],
                         threshold_used=threshold, model_name=handle.profile.name)
        for i, p, d in zip(ids, probs, decisions)
    ]


def write_predictions(records: Sequence[PredictionRecord], out, class_names: Sequence[str]) -> tuple[Path, Path]:
    """Write ``<out>.csv`` and ``<out>.json``; ``out`` may be given with or without a suffix."""
    out = Path(out)
    base = out.with_suffix("") if out.suffix in (".csv", ".json") else out
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = base.with_suffix(".csv"), base.with_suffix(".json")
    n = len(class_names)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["record_id", *(f"prob_{c}" for c in class_names), *(f"decision_{c}" for c in class_names)])
        for r in records:
            if len(r.probabilities) != n:
                raise ValueError(f"{r.record_id}: {len(r.probabilities)} probabilities for {n} classes")
            writer.writerow([r.record_id, *(repr(p) for p in r.probabilities), *r.decisions])
    json_path.write_text(json.dumps([asdict(r) for r in records], indent=2))
    return csv_path, json_path


def read_predictions(path) -> list[PredictionRecord]:
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    return [PredictionRecord(**r) for r in json.loads(path.read_text())]


def read_prediction_classes(path) -> list[str]:
    """Class names in column order, recovered from the prediction CSV header."""
    path = Path(path)
    if path.suffix != ".csv":
        path = path.with_suffix(".csv")
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    return [h[len("prob_"):] for h in header if h.startswith("prob_")]
