"""Land-cover distribution over predicted tiles: per-image frequency and detection share."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from landcover.dataset import LabelVocabulary


@dataclass
class AggregateDistribution:
    classes: tuple[str, ...]
    per_class_count: dict[str, int]
    n_images: int
    frequency_pct: dict[str, float]
    share_pct: dict[str, float]
    shares_defined: bool

    @property
    def total_detections(self) -> int:
        return sum(self.per_class_count.values())


def aggregate(records: Sequence, vocab: LabelVocabulary) -> AggregateDistribution:
    """Count detections per class.

    ``frequency_pct`` is the share of images in which a class was detected;
    ``share_pct`` divides each count by the total number of detections, so a
    multi-label image contributes to several classes.
    """
    counts = np.zeros(vocab.size, dtype=np.int64)
    for r in records:
        decisions = np.asarray(r.decisions, dtype=np.int64)
        if decisions.shape != (vocab.size,):
            raise ValueError(f"{r.record_id}: {decisions.shape[0]} decisions, vocabulary has {vocab.size}")
        counts += decisions
    n = len(records)
    total = int(counts.sum())
    per_class = {c: int(k) for c, k in zip(vocab.classes, counts)}
    frequency = {c: (100.0 * k / n if n else 0.0) for c, k in per_class.items()}
    share = {c: (100.0 * k / total if total else 0.0) for c, k in per_class.items()}
    return AggregateDistribution(
        classes=vocab.classes,
        per_class_count=per_class,
        n_images=n,
        frequency_pct=frequency,
        share_pct=share,
        shares_defined=total > 0,
    )


def _sorted_desc(values: dict[str, float], classes: Sequence[str]) -> list[tuple[str, float]]:
    rank = {c: i for i, c in enumerate(classes)}
    return sorted(values.items(), key=lambda kv: (-kv[1], rank[kv[0]]))


def _write(path: Path, column: str, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", column])
        for name, value in rows:
            writer.writerow([name, repr(float(value))])


def emit_chart_data(dist: AggregateDistribution, out, render: bool = False) -> dict[str, Path]:
    """Write ``share.csv`` and ``frequency.csv`` (descending) into ``out``.

    With ``render=True`` a pie chart of shares and a bar chart of
    frequencies are also saved as PNG (needs matplotlib).
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"share": out / "share.csv", "frequency": out / "frequency.csv"}
    _write(paths["share"], "share_pct", _sorted_desc(dist.share_pct, dist.classes))
    _write(paths["frequency"], "frequency_pct", _sorted_desc(dist.frequency_pct, dist.classes))
    if render:
        paths.update(_render(dist, out))
    return paths


def read_chart_csv(path) -> dict[str, float]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return {row[0]: float(row[1]) for row in reader}


def format_distribution(dist: AggregateDistribution) -> str:
    """Human-readable summary: shares to one decimal, frequencies to two."""
    lines = [f"images: {dist.n_images}  detections: {dist.total_detections}"]
    for name, freq in _sorted_desc(dist.frequency_pct, dist.classes):
        share = f"{dist.share_pct[name]:.1f}%" if dist.shares_defined else "n/a"
        lines.append(f"{name:<14} frequency {freq:6.2f}%  share {share}")
    return "\n".join(lines)


def _render(dist: AggregateDistribution, out: Path) -> dict[str, Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = {}
    shares = [(c, v) for c, v in _sorted_desc(dist.share_pct, dist.classes) if v > 0]
    if shares:
        fig, ax = plt.subplots(figsize=(7, 7))
        ax.pie([v for _, v in shares], labels=[c for c, _ in shares], autopct="%1.1f%%")
        ax.set_title("Share of detected land-cover classes")
        paths["share_png"] = out / "share.png"
        fig.savefig(paths["share_png"], dpi=120, bbox_inches="tight")
        plt.close(fig)

    freq = _sorted_desc(dist.frequency_pct, dist.classes)[::-1]
    fig, ax = plt.subplots(figsize=(7, max(3, 0.35 * len(freq))))
    ax.barh([c for c, _ in freq], [v for _, v in freq])
    ax.set_xlabel("% of images where detected")
    paths["frequency_png"] = out / "frequency.png"
    fig.savefig(paths["frequency_png"], dpi=120, bbox_inches="tight")
    plt.close(fig)
    return paths
