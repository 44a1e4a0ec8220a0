import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from landcover.dataset import (
    REPORTED_CLASSES,
    AugmentationConfig,
    LabeledImage,
    LabelVocabulary,
    augment,
    class_distribution,
    load_corpus,
    resize_image,
    split_corpus,
)
from landcover.exceptions import CorpusLoadError, SchemaError

# header of the public 17-class multi-label annotation file
UCM_MULTILABEL_CLASSES = (
    "airplane", "bare-soil", "buildings", "cars", "chaparral", "court", "dock", "field", "grass",
    "mobile-home", "pavement", "sand", "sea", "ship", "tanks", "trees", "water",
)


def _images(n, size=8, n_labels=3, seed=0):
    rng = np.random.default_rng(seed)
    return [
        LabeledImage(f"im{i:04d}", rng.integers(0, 256, (size, size, 3), dtype=np.uint8),
                     rng.integers(0, 2, n_labels))
        for i in range(n)
    ]


class TestVocabulary:
    def test_rejects_duplicates_and_blanks(self):
        with pytest.raises(SchemaError):
            LabelVocabulary(("a", "b", "a"))
        with pytest.raises(SchemaError):
            LabelVocabulary(("a", " "))

    def test_ucm_header_covers_reported_classes(self):
        vocab = LabelVocabulary(UCM_MULTILABEL_CLASSES)
        assert vocab.size == 17
        assert vocab.missing() == []
        assert set(REPORTED_CLASSES) <= set(vocab)

    def test_order_defines_index(self):
        vocab = LabelVocabulary(("water", "trees"))
        assert vocab.index("trees") == 1


class TestLoadCorpus:
    def test_fixture(self, fixture_corpus):
        image_dir, label_file, vocab, images = fixture_corpus
        loaded_vocab, loaded = load_corpus(image_dir, label_file)
        assert loaded_vocab == vocab
        assert len(loaded) == 4
        assert [x.image_id for x in loaded] == sorted(x.image_id for x in images)
        for got, want in zip(loaded, images):
            np.testing.assert_array_equal(got.pixels, want.pixels)
            np.testing.assert_array_equal(got.labels, want.labels)

    def test_short_row_is_schema_error_naming_row(self, fixture_corpus):
        image_dir, label_file, _, _ = fixture_corpus
        lines = label_file.read_text().splitlines()
        lines[2] = ",".join(lines[2].split(",")[:-1])
        label_file.write_text("\n".join(lines) + "\n")
        with pytest.raises(SchemaError, match=r"row 3 \('img1'\)"):
            load_corpus(image_dir, label_file)

    def test_duplicate_id(self, fixture_corpus):
        image_dir, label_file, _, _ = fixture_corpus
        lines = label_file.read_text().splitlines()
        label_file.write_text("\n".join(lines + [lines[1]]) + "\n")
        with pytest.raises(SchemaError, match="duplicate"):
            load_corpus(image_dir, label_file)

    def test_missing_image_names_id(self, fixture_corpus):
        image_dir, label_file, _, _ = fixture_corpus
        (image_dir / "img2.png").unlink()
        with pytest.raises(CorpusLoadError, match="img2"):
            load_corpus(image_dir, label_file)

    def test_tab_separated_nested_layout(self, tmp_path, fixture_corpus):
        # the public release keeps images in per-scene folders and a tab-separated label file
        image_dir, label_file, vocab, images = fixture_corpus
        nested = tmp_path / "UCMerced" / "Images" / "scene"
        nested.mkdir(parents=True)
        for p in image_dir.iterdir():
            p.rename(nested / p.name)
        tsv = tmp_path / "labels.txt"
        tsv.write_text("\n".join(line.replace(",", "\t") for line in label_file.read_text().splitlines()))
        loaded_vocab, loaded = load_corpus(tmp_path / "UCMerced", tsv)
        assert loaded_vocab == vocab and len(loaded) == 4


class TestSplit:
    def test_sizes(self):
        split = split_corpus(_images(10), 0.2, seed=7)
        assert len(split.val) == 2 and len(split.train) == 8

    def test_deterministic(self):
        corpus = _images(10)
        assert split_corpus(corpus, 0.2, 7).ids() == split_corpus(corpus, 0.2, 7).ids()

    def test_full_scale_partition(self):
        corpus = [LabeledImage(f"id{i}", np.zeros((1, 1, 3), np.uint8), [0]) for i in range(2100)]
        a, b = split_corpus(corpus, 0.2, 1), split_corpus(corpus, 0.2, 1)
        train, val = a.ids()
        assert len(val) == 420
        assert (train, val) == b.ids()
        assert not train & val and len(train | val) == 2100

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.1, 1.5])
    def test_bad_fraction(self, frac):
        with pytest.raises(ValueError):
            split_corpus(_images(4), frac, 0)

    @given(st.integers(1, 60), st.floats(0.01, 0.99), st.integers(0, 2**16))
    @settings(max_examples=50, deadline=None)
    def test_partition_property(self, n, frac, seed):
        corpus = [LabeledImage(f"id{i}", np.zeros((1, 1, 3), np.uint8), [0]) for i in range(n)]
        split = split_corpus(corpus, frac, seed)
        train, val = split.ids()
        assert not train & val
        assert train | val == {c.image_id for c in corpus}
        assert len(val) == int(np.floor(frac * n + 0.5))


class TestAugment:
    @pytest.fixture
    def img(self):
        return _images(1, size=8)[0]

    def test_hflip_involution(self, img):
        twice = augment(augment(img, "hflip"), "hflip")
        np.testing.assert_array_equal(twice.pixels, img.pixels)

    def test_rot90_order_four(self, img):
        out = img
        for _ in range(4):
            out = augment(out, "rot90")
        np.testing.assert_array_equal(out.pixels, img.pixels)

    def test_rot180_is_both_flips(self, img):
        a = augment(img, "rot180").pixels
        b = augment(img, ("hflip", "vflip")).pixels
        # exhaustive pixel comparison against explicit index arithmetic
        h, w, _ = img.pixels.shape
        for r in range(h):
            for c in range(w):
                np.testing.assert_array_equal(a[r, c], img.pixels[h - 1 - r, w - 1 - c])
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("tag", ["identity", "hflip", "vflip", "rot90", "rot180", "rot270"])
    def test_labels_unchanged_and_id_tagged(self, img, tag):
        out = augment(img, tag)
        np.testing.assert_array_equal(out.labels, img.labels)
        assert out.image_id == f"{img.image_id}#{tag}"
        assert out.pixels.shape == img.pixels.shape

    def test_rot90_rejects_non_square(self):
        img = LabeledImage("x", np.zeros((4, 6, 3), np.uint8), [1])
        with pytest.raises(ValueError):
            augment(img, "rot90")
        assert augment(img, "rot180").pixels.shape == (4, 6, 3)

    def test_config_always_has_identity_rotation(self):
        assert AugmentationConfig(rotations=(90,)).rotations == (0, 90)
        with pytest.raises(ValueError):
            AugmentationConfig(rotations=(45,))

    def test_sample_draws_from_group(self):
        cfg = AugmentationConfig()
        rng = np.random.default_rng(0)
        seen = {cfg.sample(rng) for _ in range(200)}
        assert () in seen and len(seen) == 16


class TestResize:
    def test_tile_downscale(self):
        tile = np.zeros((640, 640, 3), np.uint8)
        assert resize_image(tile, 256).shape == (256, 256, 3)

    def test_inception_upscale(self):
        assert resize_image(np.zeros((256, 256, 3), np.uint8), 299).shape == (299, 299, 3)

    def test_identity(self, rng):
        x = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
        np.testing.assert_array_equal(resize_image(x, 32), x)

    def test_constant_image_stays_constant(self):
        x = np.full((20, 30, 3), 77, np.uint8)
        assert (resize_image(x, 13) == 77).all()

    @given(arrays(np.uint8, st.tuples(st.integers(2, 24), st.integers(2, 24), st.just(3))), st.integers(1, 40))
    @settings(max_examples=40, deadline=None)
    def test_idempotent_at_target(self, x, t):
        once = resize_image(x, t)
        np.testing.assert_array_equal(resize_image(once, t), once)

    def test_bad_target(self):
        with pytest.raises(ValueError):
            resize_image(np.zeros((4, 4, 3), np.uint8), 0)


class TestClassDistribution:
    def test_hand_count(self):
        vocab = LabelVocabulary(("c0", "c1"))
        imgs = [LabeledImage(str(i), np.zeros((1, 1, 3), np.uint8), y) for i, y in enumerate([[1, 0], [1, 1], [0, 0]])]
        assert class_distribution(imgs, vocab) == {"c0": 2, "c1": 1}

    def test_empty(self):
        assert class_distribution([], LabelVocabulary(("a", "b"))) == {"a": 0, "b": 0}

    def test_column_sum_oracle_and_order_invariance(self):
        vocab = LabelVocabulary(tuple(f"c{j}" for j in range(5)))
        imgs = _images(50, size=2, n_labels=5, seed=3)
        oracle = {f"c{j}": sum(int(img.labels[j]) for img in imgs) for j in range(5)}
        assert class_distribution(imgs, vocab) == oracle
        assert class_distribution(imgs[::-1], vocab) == oracle

    def test_length_mismatch(self):
        with pytest.raises(SchemaError):
            class_distribution(_images(2, n_labels=2), LabelVocabulary(("a", "b", "c")))
