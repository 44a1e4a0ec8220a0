"""Multi-label training corpus: vocabulary, loading, splitting and augmentation."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from landcover.exceptions import CorpusLoadError, SchemaError

IMAGE_SUFFIXES = (".tif", ".tiff", ".png", ".jpg", ".jpeg", ".bmp", ".gif")

# Classes that must be present in any vocabulary used for buyout reports.
REPORTED_CLASSES = (
    "trees", "grass", "bare-soil", "pavement", "buildings",
    "cars", "water", "sand", "sea",
)

TRANSFORM_TAGS = ("identity", "hflip", "vflip", "rot90", "rot180", "rot270")


@dataclass(frozen=True)
class LabelVocabulary:
    classes: tuple[str, ...]

    def __post_init__(self):
        classes = tuple(str(c) for c in self.classes)
        if any(not c.strip() for c in classes):
            raise SchemaError("class names must be non-empty")
        if len(set(classes)) != len(classes):
            dupes = sorted({c for c in classes if classes.count(c) > 1})
            raise SchemaError(f"duplicate class names: {dupes}")
        object.__setattr__(self, "classes", classes)

    @property
    def size(self) -> int:
        return len(self.classes)

    def __len__(self):
        return len(self.classes)

    def __iter__(self):
        return iter(self.classes)

    def index(self, name: str) -> int:
        return self.classes.index(name)

    def missing(self, required: Iterable[str] = REPORTED_CLASSES) -> list[str]:
        return [c for c in required if c not in self.classes]


@dataclass
class LabeledImage:
    image_id: str
    pixels: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or not np.isin(self.labels, (0, 1)).all():
            raise SchemaError(f"{self.image_id}: labels must be a binary vector")
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise SchemaError(f"{self.image_id}: pixels must be H x W x 3, got {self.pixels.shape}")


@dataclass
class DatasetSplit:
    train: list[LabeledImage]
    val: list[LabeledImage]
    seed: int
    val_fraction: float

    def ids(self) -> tuple[set[str], set[str]]:
        return {x.image_id for x in self.train}, {x.image_id for x in self.val}


@dataclass(frozen=True)
class AugmentationConfig:
    horizontal_flip: bool = True
    vertical_flip: bool = True
    rotations: tuple[int, ...] = (0, 90, 180, 270)

    def __post_init__(self):
        rots = tuple(sorted({int(r) % 360 for r in self.rotations} | {0}))
        bad = [r for r in rots if r not in (0, 90, 180, 270)]
        if bad:
            raise ValueError(f"rotations must be multiples of 90 degrees, got {bad}")
        object.__setattr__(self, "rotations", rots)

    @classmethod
    def disabled(cls) -> "AugmentationConfig":
        return cls(horizontal_flip=False, vertical_flip=False, rotations=(0,))

    def sample(self, rng: np.random.Generator) -> tuple[str, ...]:
        """Draw one composite transform: each flip with p=0.5, rotation uniform."""
        tags = []
        if self.horizontal_flip and rng.random() < 0.5:
            tags.append("hflip")
        if self.vertical_flip and rng.random() < 0.5:
            tags.append("vflip")
        angle = self.rotations[int(rng.integers(len(self.rotations)))]
        if angle:
            tags.append(f"rot{angle}")
        return tuple(tags)


def _read_label_rows(label_file: Path) -> tuple[list[str], list[list[str]]]:
    with open(label_file, newline="") as fh:
        text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise SchemaError(f"{label_file}: label file is empty")
    # the public multi-label release is tab-separated; our own files are CSV
    delimiter = "\t" if "\t" in lines[0] else ","
    rows = [[cell.strip() for cell in row] for row in csv.reader(lines, delimiter=delimiter)]
    return rows[0], rows[1:]


def _index_images(image_dir: Path) -> dict[str, Path]:
    index: dict[str, Path] = {}
    for path in sorted(image_dir.rglob("*")):
        if path.suffix.lower() in IMAGE_SUFFIXES and path.is_file():
            index.setdefault(path.stem, path)
    return index


def _decode_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def load_corpus(image_dir, label_file, workers: int = 4) -> tuple[LabelVocabulary, list[LabeledImage]]:
    """Load every labelled image listed in ``label_file``.

    The label file's header row is ``image_id, class_1, ..., class_L``; each
    data row carries 0/1 flags. Images are looked up by file stem anywhere
    below ``image_dir``. Results are sorted by image id.
    """
    image_dir, label_file = Path(image_dir), Path(label_file)
    if not label_file.is_file():
        raise SchemaError(f"label file not found: {label_file}")
    if not image_dir.is_dir():
        raise CorpusLoadError(f"image directory not found: {image_dir}")

    header, rows = _read_label_rows(label_file)
    if len(header) < 2:
        raise SchemaError(f"{label_file}: header needs an id column and at least one class")
    vocab = LabelVocabulary(tuple(header[1:]))
    n_labels = vocab.size

    labels: dict[str, np.ndarray] = {}
    for lineno, row in enumerate(rows, start=2):
        image_id = row[0]
        if len(row) - 1 != n_labels:
            raise SchemaError(
                f"{label_file}: row {lineno} ({image_id!r}) has {len(row) - 1} labels, expected {n_labels}"
            )
        if image_id in labels:
            raise SchemaError(f"{label_file}: duplicate image_id {image_id!r} at row {lineno}")
        try:
            vec = np.array([int(v) for v in row[1:]], dtype=np.int64)
        except ValueError as exc:
            raise SchemaError(f"{label_file}: row {lineno} ({image_id!r}) is not integer: {exc}") from None
        if not np.isin(vec, (0, 1)).all():
            raise SchemaError(f"{label_file}: row {lineno} ({image_id!r}) has non-binary labels")
        labels[image_id] = vec

    index = _index_images(image_dir)
    ids = sorted(labels)
    missing = [i for i in ids if i not in index]
    if missing:
        raise CorpusLoadError(f"missing image file for id {missing[0]!r} ({len(missing)} missing in total)")

    def decode(image_id):
        try:
            return _decode_rgb(index[image_id])
        except Exception as exc:
            raise CorpusLoadError(f"cannot decode image {image_id!r}: {exc}") from exc

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        pixels = list(pool.map(decode, ids))
    return vocab, [LabeledImage(i, p, labels[i]) for i, p in zip(ids, pixels)]


def write_label_csv(path, vocab: LabelVocabulary, images: Sequence[LabeledImage]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", *vocab.classes])
        for img in images:
            writer.writerow([img.image_id, *(int(v) for v in img.labels)])


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_corpus(corpus: Sequence[LabeledImage], val_fraction: float = 0.2, seed: int = 0) -> DatasetSplit:
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction!r}")
    if not corpus:
        raise ValueError("cannot split an empty corpus")
    n = len(corpus)
    n_val = _round_half_up(val_fraction * n)
    order = np.random.default_rng(seed).permutation(n)
    val_idx = set(order[:n_val].tolist())
    train = [img for i, img in enumerate(corpus) if i not in val_idx]
    val = [img for i, img in enumerate(corpus) if i in val_idx]
    return DatasetSplit(train=train, val=val, seed=seed, val_fraction=val_fraction)


def _apply_one(pixels: np.ndarray, tag: str) -> np.ndarray:
    if tag == "identity":
        return pixels
    if tag == "hflip":
        return pixels[:, ::-1]
    if tag == "vflip":
        return pixels[::-1]
    if tag in ("rot90", "rot180", "rot270"):
        k = int(tag[3:]) // 90
        if k % 2 and pixels.shape[0] != pixels.shape[1]:
            raise ValueError(f"{tag} needs a square image, got {pixels.shape[0]}x{pixels.shape[1]}")
        return np.rot90(pixels, k=k, axes=(0, 1))
    raise ValueError(f"unknown transform {tag!r}; expected one of {TRANSFORM_TAGS}")


def augment_pixels(pixels: np.ndarray, transform) -> np.ndarray:
    tags = (transform,) if isinstance(transform, str) else tuple(transform)
    out = pixels
    for tag in tags:
        out = _apply_one(out, tag)
    return np.ascontiguousarray(out)


def augment(img: LabeledImage, transform) -> LabeledImage:
    """Apply a flip/rotation (or a sequence of them, left to right) to ``img``.

    Rotations are counter-clockwise. Labels are carried over unchanged and
    the id gets a ``#tag`` suffix.
    """
    tags = (transform,) if isinstance(transform, str) else tuple(transform)
    pixels = augment_pixels(img.pixels, tags)
    suffix = "+".join(tags) if tags else "identity"
    return replace(img, image_id=f"{img.image_id}#{suffix}", pixels=pixels, labels=img.labels.copy())


def resize_image(pixels: np.ndarray, target: int) -> np.ndarray:
    """Bilinear resize of an H x W x 3 uint8 image to target x target."""
    target = int(target)
    if target <= 0:
        raise ValueError(f"target size must be positive, got {target}")
    arr = np.asarray(pixels)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 pixels, got shape {arr.shape}")
    if arr.shape[0] == target and arr.shape[1] == target:
        return arr.copy()
    im = Image.fromarray(np.asarray(arr, dtype=np.uint8))
    return np.asarray(im.resize((target, target), Image.BILINEAR), dtype=np.uint8)


def class_distribution(corpus: Sequence[LabeledImage], vocab: LabelVocabulary) -> dict[str, int]:
    counts = np.zeros(vocab.size, dtype=np.int64)
    for img in corpus:
        if img.labels.shape[0] != vocab.size:
            raise SchemaError(f"{img.image_id}: {img.labels.shape[0]} labels, vocabulary has {vocab.size}")
        counts += img.labels
    return {name: int(c) for name, c in zip(vocab.classes, counts)}


def stack_corpus(images: Sequence[LabeledImage]) -> tuple[np.ndarray, np.ndarray]:
    """Stack same-sized images into (N x H x W x 3, N x L) arrays."""
    x = np.stack([img.pixels for img in images])
    y = np.stack([img.labels for img in images])
    return x, y
