"""Command-line behavior: determinism, config precedence, error paths."""

import json
import os
from pathlib import Path

import pytest

from radnet.cli import main


def tree_digest(root: Path) -> dict[str, bytes]:
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = path.read_bytes()
    return out


class TestSynthCommand:
    def test_same_seed_identical_trees(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            code = main(
                ["synth", "--nodes", "4", "--days", "14", "--seed", "7", "--out", str(out)]
            )
            assert code == 0
        assert tree_digest(a) == tree_digest(b)

    def test_incident_csv_written(self, tmp_path):
        out = tmp_path / "ds"
        main(["synth", "--nodes", "3", "--days", "9", "--seed", "1", "--out", str(out),
              "--events", "5"])
        lines = (out / "incidents.csv").read_text().splitlines()
        assert lines[0] == "timestep,link_id"
        assert len(lines) > 1


class TestStatsCommand:
    def test_stats_json(self, tmp_path, capsys):
        ds = tmp_path / "ds"
        main(["synth", "--nodes", "3", "--days", "9", "--seed", "2", "--out", str(ds)])
        out_file = tmp_path / "stats.json"
        code = main(["stats", "--data", str(ds), "--out", str(out_file)])
        assert code == 0
        raw = json.loads(out_file.read_text())
        assert raw["timesteps"] == 9 * 288
        assert "timesteps 2592" in capsys.readouterr().out

    def test_missing_dataset_fails(self, tmp_path, capsys):
        code = main(["stats", "--data", str(tmp_path / "nope")])
        assert code == 1
        assert "error:" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    """A small dataset with a trained checkpoint, shared across CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    ds = root / "ds"
    assert main(
        ["synth", "--nodes", "4", "--days", "10", "--seed", "5", "--out", str(ds),
         "--events", "10", "--depth", "0.5", "--duration", "6", "--min-start", "300"]
    ) == 0
    run = root / "run"
    assert main(
        ["train", "--data", str(ds), "--out", str(run), "--seed", "5",
         "--max-epochs", "8", "--patience", "8", "--lr", "1e-3"]
    ) == 0
    return ds, run


class TestTrainForecastDetectEvaluate:
    def test_train_outputs(self, trained_dir):
        _, run = trained_dir
        assert (run / "checkpoint.json").exists()
        assert (run / "checkpoint.bin").exists()
        assert (run / "config.json").exists()
        lines = (run / "loss_curves.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss"
        assert len(lines) == 9

    def test_forecast_writes_container(self, trained_dir, tmp_path):
        ds, run = trained_dir
        out = tmp_path / "fc"
        code = main(
            ["forecast", "--data", str(ds), "--checkpoint", str(run / "checkpoint"),
             "--out", str(out)]
        )
        assert code == 0
        targets = json.loads((out / "targets.json").read_text())["target_timesteps"]
        meta = json.loads((out / "meta.json").read_text())
        assert meta["T"] == len(targets)

    def test_detect_then_evaluate(self, trained_dir, tmp_path, capsys):
        ds, run = trained_dir
        det = tmp_path / "det"
        code = main(
            ["detect", "--data", str(ds), "--checkpoint", str(run / "checkpoint"),
             "--out", str(det), "--percentile", "98", "--risk-q", "1e-2"]
        )
        assert code == 0
        assert (det / "labels_pred.csv").exists()
        assert (det / "labels_truth.csv").exists()
        code = main(["evaluate", "--detect", str(det), "--out", str(det)])
        assert code == 0
        report = json.loads((det / "report.json").read_text())
        assert set(report["counts"]) == {"tp", "fp", "fn"}
        assert "F1" in (det / "report.txt").read_text()

    def test_evaluate_identity_when_pred_equals_truth(self, trained_dir, tmp_path):
        ds, run = trained_dir
        det = tmp_path / "det2"
        main(["detect", "--data", str(ds), "--checkpoint", str(run / "checkpoint"),
              "--out", str(det), "--percentile", "98", "--risk-q", "1e-2"])
        (det / "labels_pred.csv").write_text((det / "labels_truth.csv").read_text())
        main(["evaluate", "--detect", str(det), "--out", str(det)])
        report = json.loads((det / "report.json").read_text())
        assert report["f1"] == 1.0

    def test_missing_checkpoint_names_expected_path(self, trained_dir, tmp_path, capsys):
        ds, _ = trained_dir
        code = main(
            ["detect", "--data", str(ds), "--checkpoint", str(tmp_path / "ghost"),
             "--out", str(tmp_path / "d")]
        )
        assert code == 1
        err = capsys.readouterr().err
        assert "ghost" in err and "checkpoint" in err

    def test_report_command(self, trained_dir, tmp_path):
        ds, run = trained_dir
        out = tmp_path / "rep"
        code = main(
            ["report", "--data", str(ds), "--checkpoint", str(run / "checkpoint"),
             "--out", str(out), "--percentile", "98"]
        )
        assert code == 0
        header = (out / "series_report.csv").read_text().splitlines()[0]
        assert header.startswith("timestep,link_id,baseline,truth,prediction")


class TestTrainIdempotence:
    def test_same_seed_identical_checkpoints(self, tmp_path):
        ds = tmp_path / "ds"
        main(["synth", "--nodes", "3", "--days", "9", "--seed", "9", "--out", str(ds)])
        digests = []
        for name in ("r1", "r2"):
            run = tmp_path / name
            assert main(
                ["train", "--data", str(ds), "--out", str(run), "--seed", "9",
                 "--max-epochs", "2", "--patience", "5"]
            ) == 0
            digests.append(
                ((run / "checkpoint.bin").read_bytes(), (run / "checkpoint.json").read_bytes())
            )
        assert digests[0] == digests[1]


class TestConfigPrecedence:
    def test_flag_beats_file_beats_default(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"nodes": 3, "days": 9, "seed": 11}))
        a = tmp_path / "a"
        main(["synth", "--config", str(cfg), "--out", str(a)])
        meta = json.loads((a / "meta.json").read_text())
        assert meta["N"] == 3  # from file (default is 4)
        b = tmp_path / "b"
        main(["synth", "--config", str(cfg), "--nodes", "5", "--out", str(b)])
        meta = json.loads((b / "meta.json").read_text())
        assert meta["N"] == 5  # flag wins
        assert json.loads((b / "meta.json").read_text())["T"] == 9 * 288  # file wins over default

    def test_nested_train_block(self, tmp_path):
        ds = tmp_path / "ds"
        main(["synth", "--nodes", "3", "--days", "9", "--seed", "3", "--out", str(ds)])
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"train": {"max_epochs": 2, "lr": 1e-3}}))
        run = tmp_path / "run"
        code = main(
            ["train", "--data", str(ds), "--config", str(cfg), "--out", str(run),
             "--seed", "3"]
        )
        assert code == 0
        stored = json.loads((run / "config.json").read_text())
        assert stored["train"]["max_epochs"] == 2


class TestEntrypoint:
    def test_console_script_exit_codes(self, tmp_path):
        import subprocess
        import sys

        env = dict(os.environ, RADNET_LOG="ERROR")
        proc = subprocess.run(
            [sys.executable, "-m", "radnet.cli", "stats", "--data", str(tmp_path / "missing")],
            capture_output=True,
            text=True,
            env=env,
        )
        assert proc.returncode == 1
        assert "error:" in proc.stderr
