import json

import pytest
import yaml

from e2e import STAGES, pipeline_workspace
from landcover.cli import DEFAULTS, load_config, main
from landcover.evaluation import MetricsReport
from landcover.models import read_manifest
from landcover.report import read_chart_csv


def _config(tmp_path, data):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(data))
    return path


class TestConfig:
    def test_defaults_and_overrides(self, tmp_path):
        cfg = load_config(_config(tmp_path, {"training": {"epochs": 3}}),
                          ["training.batch_size=8", "evaluation.grid=[0.3, 0.6]"])
        assert cfg["training"]["epochs"] == 3 and cfg["training"]["batch_size"] == 8
        assert cfg["evaluation"]["grid"] == [0.3, 0.6]
        assert cfg["service"]["zoom"] == DEFAULTS["service"]["zoom"]
        assert cfg["paths"]["output_dir"] == str(tmp_path / "output")

    def test_missing_config_file(self, tmp_path):
        assert main(["prepare-data", "--config", str(tmp_path / "nope.yaml")]) == 2

    def test_bad_override(self, tmp_path):
        assert main(["prepare-data", "--config", str(_config(tmp_path, {})), "--set", "oops"]) == 2

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main(["explode", "--config", "x"])
        assert exc.value.code == 2


class TestExitCodes:
    def test_missing_label_file(self, tmp_path, fixture_corpus):
        image_dir, _, _, _ = fixture_corpus
        cfg = _config(tmp_path, {"paths": {"corpus": str(image_dir), "labels": "missing.csv"}})
        assert main(["prepare-data", "--config", str(cfg)]) == 2

    def test_schema_error(self, tmp_path, fixture_corpus):
        image_dir, label_file, _, _ = fixture_corpus
        label_file.write_text(label_file.read_text() + "img9,1\n")
        cfg = _config(tmp_path, {"paths": {"corpus": str(image_dir), "labels": str(label_file)}})
        assert main(["prepare-data", "--config", str(cfg)]) == 3

    def test_missing_checkpoint(self, tmp_path):
        (tmp_path / "cache").mkdir()
        (tmp_path / "cache" / "ledger.json").write_text('{"results": []}')
        assert main(["predict", "--config", str(_config(tmp_path, {}))]) == 2

    def test_nothing_to_evaluate(self, tmp_path):
        assert main(["evaluate", "--config", str(_config(tmp_path, {}))]) == 2

    def test_prepare_data_outputs(self, tmp_path, fixture_corpus, capsys):
        image_dir, label_file, _, _ = fixture_corpus
        cfg = _config(tmp_path, {"paths": {"corpus": str(image_dir), "labels": str(label_file)}})
        assert main(["prepare-data", "--config", str(cfg)]) == 0
        rows = (tmp_path / "output" / "data" / "class_distribution.csv").read_text().splitlines()
        assert rows == ["class,count", "trees,2", "grass,2", "pavement,2"]
        manifest = json.loads((tmp_path / "output" / "run_manifests" / "prepare-data.json").read_text())
        assert len(manifest["input_digests"]["labels"]) == 64
        assert "4 images" in capsys.readouterr().out


def test_reference_reports_render(tmp_path):
    rows = [("resnet50", 51.67, 90.23, 86.13, 88.13, 98.69), ("densenet201", 51.67, 88.46, 90.16, 89.30, 98.86)]
    reports = []
    for name, *values in rows:
        path = tmp_path / f"{name}.json"
        MetricsReport(name, 0.4, *values).to_json(path)
        reports.append(path.name)
    cfg = _config(tmp_path, {"evaluation": {"reports": reports}})
    assert main(["evaluate", "--config", str(cfg)]) == 0
    lines = (tmp_path / "output" / "evaluation" / "comparison.txt").read_text().splitlines()
    assert " ".join(lines[2].split()) == "densenet201 51.67 88.46 90.16 89.30 98.86"


def test_full_pipeline(tmp_path):
    with pipeline_workspace(tmp_path) as (config, stub):
        for stage in STAGES:
            assert main([stage, "--config", str(config)]) == 0, stage
        out = tmp_path / "output"

        summary = json.loads((out / "fetch" / "fetch_summary.json").read_text())
        assert summary == {"total": 12, "retrieved": 10, "failed": 2, "by_reason": {"bad_address": 2}}

        manifest = read_manifest(out / "checkpoints" / "tiny_cnn" / "model.pt")
        sweep = (out / "evaluation" / "threshold_sweep_tiny_cnn.csv").read_text().splitlines()
        assert len(sweep) == 20
        assert manifest["threshold"] in [float(r.split(",")[0]) for r in sweep[1:]]

        preds = json.loads((out / "predictions" / "predictions.json").read_text())
        assert len(preds) == 10 and {p["threshold_used"] for p in preds} == {manifest["threshold"]}

        shares = read_chart_csv(out / "report" / "share.csv")
        if any(shares.values()):
            assert abs(sum(shares.values()) - 100) <= 1e-9
        assert (out / "training" / "loss_curves.csv").is_file()
        assert (out / "evaluation" / "comparison.tex").is_file()

        # a second fetch re-uses the cache and the ledger, byte for byte
        ledger = (tmp_path / "cache" / "ledger.json").read_bytes()
        calls = len(stub.calls)
        assert main(["fetch", "--config", str(config)]) == 0
        assert len(stub.calls) == calls
        assert (tmp_path / "cache" / "ledger.json").read_bytes() == ledger

        # report is idempotent
        before = (out / "report" / "share.csv").read_bytes()
        assert main(["report", "--config", str(config)]) == 0
        assert (out / "report" / "share.csv").read_bytes() == before

        # explicit threshold shortcut overrides the calibrated one
        assert main(["predict", "--config", str(config), "--threshold", "0.9"]) == 0
        preds = json.loads((out / "predictions" / "predictions.json").read_text())
        assert {p["threshold_used"] for p in preds} == {0.9}
