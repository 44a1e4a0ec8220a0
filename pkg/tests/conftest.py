import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

from landcover.dataset import LabeledImage, LabelVocabulary, write_label_csv  # noqa: E402
from landcover.synthetic import make_shapes_corpus, write_corpus  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fixture_corpus(tmp_path):
    """Four 16x16 images with a three-class header, written to disk."""
    vocab = LabelVocabulary(("trees", "grass", "pavement"))
    rng = np.random.default_rng(0)
    labels = [[1, 0, 1], [0, 1, 0], [1, 1, 1], [0, 0, 0]]
    images = [
        LabeledImage(f"img{i}", rng.integers(0, 256, (16, 16, 3), dtype=np.uint8), np.array(y))
        for i, y in enumerate(labels)
    ]
    image_dir, label_file = write_corpus(tmp_path / "corpus", vocab, images)
    return image_dir, label_file, vocab, images


@pytest.fixture(scope="session")
def shapes_corpus():
    return make_shapes_corpus(n=64, size=64, seed=0)


def write_addresses(path, n, bad=(), empty=()):
    lines = ["record_id,address_line,city,state,postal_code"]
    for i in range(n):
        addr = "" if i in empty else f"{100 + i} Main St"
        lines.append(f"R{i:05d},{addr},Springfield,IL,6270{i % 10}")
    Path(path).write_text("\n".join(lines) + "\n")
    return path
