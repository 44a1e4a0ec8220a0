"""Desk-scale synthetic data: coloured geometric composites with derived labels."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from landcover.dataset import LabeledImage, LabelVocabulary, write_label_csv

SHAPE_CLASSES = ("red-square", "green-disc", "blue-triangle", "yellow-bar")
_COLOURS = {
    "red-square": (220, 30, 30),
    "green-disc": (30, 200, 40),
    "blue-triangle": (30, 60, 230),
    "yellow-bar": (240, 220, 20),
}


def _draw(draw: ImageDraw.ImageDraw, name: str, size: int, rng: np.random.Generator) -> None:
    s = int(rng.integers(size // 4, size // 2))
    x0 = int(rng.integers(0, size - s))
    y0 = int(rng.integers(0, size - s))
    colour = _COLOURS[name]
    if name == "red-square":
        draw.rectangle([x0, y0, x0 + s, y0 + s], fill=colour)
    elif name == "green-disc":
        draw.ellipse([x0, y0, x0 + s, y0 + s], fill=colour)
    elif name == "blue-triangle":
        draw.polygon([(x0, y0 + s), (x0 + s, y0 + s), (x0 + s // 2, y0)], fill=colour)
    else:
        draw.rectangle([0, y0, size - 1, y0 + max(2, s // 4)], fill=colour)


def make_shapes_corpus(n: int = 64, size: int = 64, seed: int = 0):
    """Generate ``n`` images on a grey-noise background.

    Each of the four shape classes is drawn independently with p=0.5, so the
    label vector is known exactly. Returns ``(vocab, images)``.
    """
    rng = np.random.default_rng(seed)
    vocab = LabelVocabulary(SHAPE_CLASSES)
    images = []
    for i in range(n):
        labels = (rng.random(len(SHAPE_CLASSES)) < 0.5).astype(np.int64)
        background = rng.integers(90, 150, size=(size, size, 1)) + rng.integers(-10, 10, size=(size, size, 3))
        im = Image.fromarray(np.clip(background, 0, 255).astype(np.uint8))
        draw = ImageDraw.Draw(im)
        for name, flag in zip(SHAPE_CLASSES, labels):
            if flag:
                _draw(draw, name, size, rng)
        images.append(LabeledImage(f"shape{i:04d}", np.asarray(im, dtype=np.uint8), labels))
    return vocab, images


def write_corpus(root, vocab: LabelVocabulary, images, image_format: str = "png") -> tuple[Path, Path]:
    """Write images under ``root/images`` and the label CSV to ``root/labels.csv``."""
    root = Path(root)
    image_dir = root / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    for img in images:
        Image.fromarray(img.pixels).save(image_dir / f"{img.image_id}.{image_format}")
    label_file = root / "labels.csv"
    write_label_csv(label_file, vocab, images)
    return image_dir, label_file


def make_tile(seed: int, size: int = 640) -> np.ndarray:
    """A single shapes composite at tile resolution, used by stub map services."""
    _, images = make_shapes_corpus(n=1, size=size, seed=seed)
    return images[0].pixels
