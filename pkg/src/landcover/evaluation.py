"""Thresholded multi-label metrics, ROC-AUC, threshold sweeps and comparison tables.

Conventions used throughout:

* a label is predicted when its probability is ``>= threshold``;
* accuracy is exact-match (subset) accuracy;
* precision, recall and F1 are micro-averaged over every sample/label decision,
  with 0 reported for any empty denominator;
* ROC-AUC is the macro average of per-label one-vs-rest AUCs, with tied scores
  counted as half a correctly ordered pair.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from landcover._validation import check_pair, check_probabilities, check_threshold
from landcover.dataset import LabelVocabulary
from landcover.exceptions import UndefinedMetricError

DEFAULT_GRID = tuple(round(0.05 * k, 10) for k in range(1, 20))


@dataclass
class PredictionSet:
    probabilities: np.ndarray
    truth: np.ndarray
    vocab: Optional[LabelVocabulary] = None

    def __post_init__(self):
        self.probabilities, self.truth = check_pair(self.probabilities, self.truth)
        if self.vocab is not None and self.vocab.size != self.probabilities.shape[1]:
            raise ValueError(f"vocabulary has {self.vocab.size} classes, predictions have {self.probabilities.shape[1]}")


@dataclass
class MetricsReport:
    model_name: str
    threshold: float
    accuracy_pct: float
    precision_pct: float
    recall_pct: float
    f1_pct: float
    roc_auc_pct: float
    skipped_auc_labels: list[str] = field(default_factory=list)

    def values(self) -> tuple[float, float, float, float, float]:
        return (self.accuracy_pct, self.precision_pct, self.recall_pct, self.f1_pct, self.roc_auc_pct)

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text_or_path) -> "MetricsReport":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text_or_path).read_text()
        return cls(**json.loads(text))


@dataclass
class ThresholdSweepResult:
    grid: list[float]
    f1_at: list[float]
    best_threshold: float

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "f1"])
            for t, f in zip(self.grid, self.f1_at):
                writer.writerow([repr(t), repr(f)])
        return path


def binarize(probabilities, threshold: float) -> np.ndarray:
    p = check_probabilities(probabilities)
    return (p >= check_threshold(threshold)).astype(np.int64)


def _confusion(decisions: np.ndarray, truth: np.ndarray) -> tuple[int, int, int]:
    tp = int(np.sum((decisions == 1) & (truth == 1)))
    fp = int(np.sum((decisions == 1) & (truth == 0)))
    fn = int(np.sum((decisions == 0) & (truth == 1)))
    return tp, fp, fn


def _micro_prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return precision, recall, f1


def micro_f1(probabilities, truth, threshold: float) -> float:
    """Micro-averaged F1 as a fraction in [0, 1]."""
    p, y = check_pair(probabilities, truth)
    return _micro_prf(*_confusion(binarize(p, threshold), y))[2]


def _midranks(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    _, first, counts = np.unique(sorted_scores, return_index=True, return_counts=True)
    avg = first + (counts + 1) / 2.0  # 1-based average rank of each tie group
    ranks = np.empty(len(scores))
    ranks[order] = np.repeat(avg, counts)
    return ranks


def binary_auc(scores, truth) -> float:
    """Probability that a random positive outranks a random negative (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    n_pos = int(truth.sum())
    n_neg = len(truth) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = _midranks(scores)
    u = ranks[truth].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc_details(preds: PredictionSet) -> tuple[float, list[int]]:
    """Return the macro AUC and the indices of label columns that were skipped."""
    aucs, skipped = [], []
    for j in range(preds.truth.shape[1]):
        col = preds.truth[:, j]
        if col.min() == col.max():
            skipped.append(j)
            continue
        aucs.append(binary_auc(preds.probabilities[:, j], col))
    if not aucs:
        raise UndefinedMetricError("no label column has both a positive and a negative example")
    return float(np.mean(aucs)), skipped


def compute_roc_auc(preds: PredictionSet) -> float:
    return roc_auc_details(preds)[0]


def compute_metrics(preds: PredictionSet, threshold: float = 0.5, model_name: str = "model") -> MetricsReport:
    decisions = binarize(preds.probabilities, threshold)
    accuracy = float(np.mean(np.all(decisions == preds.truth, axis=1)))
    precision, recall, f1 = _micro_prf(*_confusion(decisions, preds.truth))
    auc, skipped = roc_auc_details(preds)
    names = preds.vocab.classes if preds.vocab is not None else None
    return MetricsReport(
        model_name=model_name,
        threshold=float(threshold),
        accuracy_pct=100.0 * accuracy,
        precision_pct=100.0 * precision,
        recall_pct=100.0 * recall,
        f1_pct=100.0 * f1,
        roc_auc_pct=100.0 * auc,
        skipped_auc_labels=[names[j] if names else str(j) for j in skipped],
    )


def sweep_thresholds(preds: PredictionSet, grid: Sequence[float] = DEFAULT_GRID) -> ThresholdSweepResult:
    """Micro-F1 (in percent) at each grid threshold; best is the first maximum in ascending order."""
    grid = [check_threshold(t) for t in grid]
    if not grid:
        raise ValueError("threshold grid is empty")
    grid = sorted(grid)
    f1_at = [100.0 * micro_f1(preds.probabilities, preds.truth, t) for t in grid]
    best = grid[int(np.argmax(f1_at))]  # argmax returns the first occurrence
    return ThresholdSweepResult(grid=grid, f1_at=f1_at, best_threshold=best)


# --------------------------------------------------------------------------
# comparison table

TABLE_COLUMNS = ("Model", "Accuracy", "Precision", "Recall", "F1", "ROC-AUC")


def _cells(report: MetricsReport) -> list[str]:
    return [report.model_name, *(f"{v:.2f}" for v in report.values())]


def render_comparison_table(reports: Sequence[MetricsReport], format: str = "text") -> str:
    rows = [_cells(r) for r in reports]
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS)
        writer.writerows(rows)
        return buf.getvalue()
    if format == "latex":
        lines = [r"\begin{tabular}{|c||c|c|c|c|c|}", r"\hline", " & ".join(TABLE_COLUMNS) + r" \\", r"\hline\hline"]
        lines += [" & ".join(row) + r" \\" for row in rows]
        lines += [r"\hline", r"\end{tabular}"]
        return "\n".join(lines) + "\n"
    if format == "text":
        widths = [max(len(c) for c in col) for col in zip(TABLE_COLUMNS, *rows)]
        fmt = lambda cells: " ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))
        return "\n".join(fmt(cells).rstrip() for cells in [TABLE_COLUMNS, *rows]) + "\n"
    raise ValueError(f"unknown table format {format!r}; use text, csv or latex")


def parse_comparison_csv(text: str) -> list[tuple[str, tuple[float, ...]]]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != TABLE_COLUMNS:
        raise ValueError(f"unexpected header {header}")
    return [(row[0], tuple(float(v) for v in row[1:])) for row in reader if row]
