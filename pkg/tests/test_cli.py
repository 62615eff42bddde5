import csv
import json
import math

import pytest
from click.testing import CliRunner

from landmark_forge.main import cli
from landmark_forge.services import run_service
from landmark_forge.services.errors import ConfigError

TINY = [
    "dataset.synthetic_count=12",
    "dataset.synthetic_identities=3",
    "dataset.canvas=48",
    "dataset.n_same_pairs=2",
    "dataset.n_diff_pairs=2",
    "augmentation.crop_size=32",
    "augmentation.resize_size=40",
    "backbone.stage_channels=[4, 8, 8, 16]",
    "backbone.stem_channels=4",
    "backbone.input_size=32",
    "backbone.embedding_dim=8",
    "backbone.hidden_multiplier=2",
    "stage1.epochs=2",
    "stage1.warmup_epochs=1",
    "stage1.batch_size=4",
    "stage2.epochs=2",
    "stage2.warmup_epochs=1",
    "stage2.batch_size=4",
    "stage2.output_dim=8",
    "stage2.fpn_channels=8",
    "stage2.projector_dim=8",
    "stage2.projector_hidden=16",
    "regressor.n_virtual=6",
    "regressor.iterations=20",
    "regressor.eval_every=10",
    "eval.overlay_pairs=1",
    "eval.nmf_rank=3",
    "eval.nmf_max_iter=20",
    "eval.nmf_images=3",
]


def _sets(extra=()):
    args = []
    for item in list(TINY) + list(extra):
        args += ["--set", item]
    return args


def _invoke(*args):
    return CliRunner().invoke(cli, list(args))


def _summary(result):
    lines = [line for line in result.stdout.splitlines() if line.startswith("{")]
    assert lines, result.output
    return json.loads(lines[-1])


class TestRunConfig:
    def test_overrides_parse_as_yaml(self):
        cfg = run_service.load_run_config(None, TINY)
        assert cfg.backbone.stage_channels == [4, 8, 8, 16]
        assert cfg.stage1.epochs == 2

    def test_flags_beat_overrides(self):
        cfg = run_service.load_run_config(None, ["stage1.epochs=5"], {"stage1.epochs": 7, "stage1.batch_size": None})
        assert cfg.stage1.epochs == 7
        assert cfg.stage1.batch_size == 32

    def test_dumped_config_reloads_identically(self, tmp_path):
        cfg = run_service.load_run_config(None, TINY + ["eval.scale.eval_zoom_grid=[1.0, 1.5]"])
        path = run_service.dump_config(cfg, tmp_path)
        assert run_service.load_run_config(str(path)) == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            run_service.load_run_config(None, ["stage1.nope=1"])

    def test_malformed_override(self):
        with pytest.raises(ConfigError):
            run_service.load_run_config(None, ["stage1.epochs"])


class TestExitCodes:
    def test_synth_rejects_zero_count(self, tmp_path, run_root):
        result = _invoke("synth", "--out", str(tmp_path / "data"), "--count", "0")
        assert result.exit_code == 2

    def test_stage2_without_stage1_checkpoint(self, run_root):
        result = _invoke("stage2", *_sets())
        assert result.exit_code == 3
        assert "encoder.ckpt" in result.output

    def test_invalid_schedule(self, run_root):
        result = _invoke("stage1", *_sets(["stage1.warmup_epochs=2"]))
        assert result.exit_code == 2

    def test_missing_config_file(self, tmp_path, run_root):
        result = _invoke("stage1", "--config", str(tmp_path / "absent.yaml"))
        assert result.exit_code == 3


class TestSynth:
    def test_writes_two_hundred_annotated_images(self, tmp_path, run_root):
        out = tmp_path / "data"
        result = _invoke("synth", "--out", str(out), "--count", "200", "--identities", "50", "--canvas", "32")
        assert result.exit_code == 0, result.output
        with open(out / "landmarks.csv") as f:
            rows = list(csv.reader(f))
        assert len(rows) == 201
        assert rows[0][-1] == "identity" and len(rows[0]) == 1 + 10 + 1
        assert len(list((out / "images").glob("*.png"))) == 200
        summary = _summary(result)
        assert summary["images"] == 200 and summary["pairs"] == 1000


class TestPipeline:
    def test_end_to_end(self, tmp_path, run_root):
        data = tmp_path / "data"
        assert _invoke("synth", "--out", str(data), *_sets()).exit_code == 0

        result = _invoke("stage1", *_sets())
        assert result.exit_code == 0, result.output
        summary = _summary(result)
        assert summary["steps"] == 4
        assert (run_root / "default" / "stage1" / "encoder.ckpt").exists()
        assert (run_root / "default" / "stage1" / "config.yaml").exists()

        result = _invoke("stage2", *_sets())
        assert result.exit_code == 0, result.output
        summary = _summary(result)
        assert math.isfinite(summary["kl_before"]) and math.isfinite(summary["kl_after"])
        assert (run_root / "default" / "stage2" / "dense.ckpt").exists()

        result = _invoke("regress", *_sets())
        assert result.exit_code == 0, result.output
        summary = _summary(result)
        assert math.isfinite(summary["val_iod"])
        assert summary["feature_dim"] == 8
        assert (run_root / "default" / "regress" / "regressor.ckpt").exists()

        result = _invoke("eval", "--protocol", "matching", *_sets())
        assert result.exit_code == 0, result.output
        summary = _summary(result)
        assert summary["metric"] == "same_identity_err"
        saved = json.loads((run_root / "default" / "eval" / "matching" / "summary.json").read_text())
        assert saved["value"] == pytest.approx(summary["value"])

        result = _invoke("eval", "--protocol", "matching", "--data", str(data), "--extractor", "hypercolumn", *_sets())
        assert result.exit_code == 0, result.output

        result = _invoke("eval", "--protocol", "nmf", "--extractor", "hypercolumn", *_sets())
        assert result.exit_code == 0, result.output
        assert (run_root / "default" / "eval" / "nmf" / "parts" / "nmf_errors.csv").exists()

        result = _invoke("eval", "--protocol", "regression", "--random-init", "--nmf-reduce", "3", *_sets())
        assert result.exit_code == 0, result.output
        assert _summary(result)["checkpoint_hash"] == "random0"

        image = data / "images" / "00000.png"
        heatmap = tmp_path / "heat.png"
        result = _invoke(
            "match-viz", "--ref", str(image), "--query", str(data / "images" / "00003.png"),
            "--point", "20", "18", "--out", str(heatmap), *_sets(),
        )
        assert result.exit_code == 0, result.output
        assert heatmap.exists()

        result = _invoke("match-viz", "--ref", str(image), "--query", str(image), "--point", "48", "5", *_sets())
        assert result.exit_code == 2
