import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from landcover.dataset import LabelVocabulary
from landcover.inference import PredictionRecord
from landcover.report import aggregate, emit_chart_data, format_distribution, read_chart_csv

VOCAB = LabelVocabulary(("trees", "grass", "pavement"))


def _records(decisions):
    return [PredictionRecord(f"r{i}", [0.5] * len(d), list(d), 0.5, "m") for i, d in enumerate(decisions)]


def test_hand_counted():
    dist = aggregate(_records([[1, 0, 0], [1, 1, 0], [0, 0, 1], [0, 0, 0]]), VOCAB)
    assert dist.per_class_count == {"trees": 2, "grass": 1, "pavement": 1}
    assert dist.frequency_pct == {"trees": 50.0, "grass": 25.0, "pavement": 25.0}
    assert dist.share_pct == {"trees": 50.0, "grass": 25.0, "pavement": 25.0}
    assert dist.total_detections == 4 and dist.n_images == 4


def test_frequency_and_share_differ_for_multilabel():
    dist = aggregate(_records([[1, 1, 0], [1, 0, 0]]), VOCAB)
    assert dist.frequency_pct["trees"] == 100.0
    assert dist.share_pct["trees"] == pytest.approx(200 / 3)


def test_single_class():
    dist = aggregate(_records([[0, 1, 0]] * 5), VOCAB)
    assert dist.share_pct["grass"] == 100.0 and dist.frequency_pct["grass"] == 100.0


def test_no_detections():
    dist = aggregate(_records([[0, 0, 0]] * 3), VOCAB)
    assert not dist.shares_defined
    assert set(dist.share_pct.values()) == {0.0}


def test_empty_input():
    dist = aggregate([], VOCAB)
    assert dist.n_images == 0 and not dist.shares_defined


def test_width_mismatch():
    with pytest.raises(ValueError):
        aggregate(_records([[1, 0]]), VOCAB)


@given(st.lists(st.lists(st.integers(0, 1), min_size=5, max_size=5), min_size=1, max_size=200),
       st.randoms(use_true_random=False))
@settings(max_examples=100, deadline=None)
def test_properties(decisions, random):
    vocab = LabelVocabulary(tuple(f"c{j}" for j in range(5)))
    dist = aggregate(_records(decisions), vocab)
    counts = {f"c{j}": sum(d[j] for d in decisions) for j in range(5)}
    assert dist.per_class_count == counts
    total = sum(counts.values())
    if total:
        assert abs(sum(dist.share_pct.values()) - 100.0) <= 1e-9
        for a in counts:
            for b in counts:
                if counts[b]:
                    assert dist.share_pct[a] / dist.share_pct[b] == pytest.approx(counts[a] / counts[b], rel=1e-9)
    for c, k in counts.items():
        assert dist.frequency_pct[c] == pytest.approx(100 * k / len(decisions), abs=1e-12)
    shuffled = list(decisions)
    random.shuffle(shuffled)
    other = aggregate(_records(shuffled), vocab)
    assert other.per_class_count == dist.per_class_count
    np.testing.assert_allclose(list(other.share_pct.values()), list(dist.share_pct.values()), atol=1e-12)


class TestChartData:
    def test_sorted_and_round_trip(self, tmp_path):
        dist = aggregate(_records([[0, 1, 1], [0, 1, 0], [0, 0, 1], [1, 1, 0]]), VOCAB)
        paths = emit_chart_data(dist, tmp_path)
        share_rows = paths["share"].read_text().splitlines()
        assert share_rows[0] == "class,share_pct"
        # grass 3, pavement 2, trees 1
        assert [r.split(",")[0] for r in share_rows[1:]] == ["grass", "pavement", "trees"]
        assert read_chart_csv(paths["share"]) == dist.share_pct
        assert read_chart_csv(paths["frequency"]) == dist.frequency_pct

    def test_ties_keep_vocabulary_order(self, tmp_path):
        dist = aggregate(_records([[1, 1, 1]]), VOCAB)
        rows = emit_chart_data(dist, tmp_path)["frequency"].read_text().splitlines()[1:]
        assert [r.split(",")[0] for r in rows] == list(VOCAB.classes)

    def test_render(self, tmp_path):
        pytest.importorskip("matplotlib")
        paths = emit_chart_data(aggregate(_records([[1, 0, 1], [0, 1, 0]]), VOCAB), tmp_path, render=True)
        assert paths["share_png"].stat().st_size > 0 and paths["frequency_png"].is_file()

    def test_format(self):
        text = format_distribution(aggregate(_records([[1, 0, 0], [1, 1, 0], [0, 0, 1]]), VOCAB))
        assert "trees" in text and "50.0%" in text and "66.67%" in text
