import csv
import json
import subprocess
import sys

import pytest

from capvit.cli import main


def run_cli(args, env_out):
    """Invoke the CLI in-process; returns (exit_code)."""
    import os

    old = os.environ.get("CAPVIT_OUT")
    os.environ["CAPVIT_OUT"] = str(env_out)
    try:
        return main(args)
    finally:
        if old is None:
            os.environ.pop("CAPVIT_OUT", None)
        else:
            os.environ["CAPVIT_OUT"] = old


class TestGenCorpus:
    def test_writes_one_shard_with_counts(self, tmp_path, capsys):
        code = run_cli(
            ["gen-corpus", "--seeds", "0:50", "--mode", "recap_v2", "--res", "16",
             "--out", str(tmp_path / "c")],
            tmp_path,
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "records=50" in out
        assert (tmp_path / "c/shard-00000.bin").exists()
        assert (tmp_path / "c/vocab.tsv").exists()
        assert (tmp_path / "c/config.resolved.json").exists()

    def test_deterministic_checksums(self, tmp_path, capsys):
        args = ["gen-corpus", "--seeds", "0:30", "--mode", "recap", "--res", "16"]
        run_cli(args + ["--out", str(tmp_path / "a")], tmp_path)
        first = capsys.readouterr().out.split("sha256=")[1].split()[0]
        run_cli(args + ["--out", str(tmp_path / "b")], tmp_path)
        second = capsys.readouterr().out.split("sha256=")[1].split()[0]
        assert first == second

    def test_bogus_mode_exit_2_lists_modes(self, tmp_path, capsys):
        code = run_cli(["gen-corpus", "--seeds", "0:5", "--mode", "bogus",
                        "--out", str(tmp_path / "c")], tmp_path)
        assert code == 2
        err = capsys.readouterr().err
        assert "alt_text" in err and "recap_v2" in err


class TestTrain:
    def test_two_stage_run_writes_everything(self, tmp_path, capsys):
        code = run_cli(
            ["train", "--pipeline", "v2", "--keep-ratio", "0.35",
             "--seeds", "0:8", "--stages", "16x4,32x2", "--batch", "8",
             "--lr", "1e-3", "--out", str(tmp_path / "t")],
            tmp_path,
        )
        assert code == 0
        with open(tmp_path / "t/metrics.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 1 + 6  # header + 4 + 2 steps
        assert (tmp_path / "t/checkpoint/manifest.json").exists()
        assert (tmp_path / "t/loss_curve.png").exists()
        resolved = json.loads((tmp_path / "t/config.resolved.json").read_text())
        assert resolved["model"]["keep_ratio"] == 0.35

    def test_v1_dispatch(self, tmp_path):
        code = run_cli(
            ["train", "--pipeline", "v1", "--seeds", "0:6",
             "--stages", "16x2", "--batch", "6", "--out", str(tmp_path / "t1")],
            tmp_path,
        )
        assert code == 0

    def test_keep_ratio_zero_exit_2(self, tmp_path):
        code = run_cli(
            ["train", "--pipeline", "v2", "--keep-ratio", "0",
             "--seeds", "0:6", "--stages", "16x2", "--out", str(tmp_path / "t2")],
            tmp_path,
        )
        assert code == 2

    def test_unknown_config_key_exit_2(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text('{"schema_version": 1, "unknown_key": 3}')
        code = run_cli(["train", "--config", str(cfg), "--out", str(tmp_path / "t3")], tmp_path)
        assert code == 2


class TestCost:
    def test_two_pipelines_two_rows(self, tmp_path, capsys):
        code = run_cli(
            ["cost", "--preset", "L14-224", "--pipelines", "v1,v2",
             "--out", str(tmp_path / "cost")],
            tmp_path,
        )
        assert code == 0
        out = capsys.readouterr().out
        assert out.count("L14-224") == 2
        assert "flops ratio" in out
        csv_text = (tmp_path / "cost/cost.csv").read_text()
        assert len(csv_text.strip().splitlines()) == 3
        assert (tmp_path / "cost/cost.png").exists()
        assert (tmp_path / "cost/cost.txt").exists()

    def test_sovit_preset_in_registry(self, tmp_path, capsys):
        code = run_cli(
            ["cost", "--preset", "SoViT400M-384", "--pipelines", "v2",
             "--out", str(tmp_path / "cost2")],
            tmp_path,
        )
        assert code == 0

    def test_batch_flag_shows_memory(self, tmp_path, capsys):
        code = run_cli(
            ["cost", "--preset", "L14-224", "--pipelines", "v2", "--batch", "2048",
             "--out", str(tmp_path / "cost3")],
            tmp_path,
        )
        assert code == 0
        assert "mem GB/dev" in capsys.readouterr().out

    def test_unknown_preset_exit_2(self, tmp_path, capsys):
        code = run_cli(["cost", "--preset", "Z99", "--out", str(tmp_path / "c4")], tmp_path)
        assert code == 2
        assert "L14-224" in capsys.readouterr().err


class TestEval:
    def test_missing_checkpoint_exit_2(self, tmp_path):
        code = run_cli(
            ["eval", "--checkpoint", str(tmp_path / "nope"), "--out", str(tmp_path / "e")],
            tmp_path,
        )
        assert code == 2

    def test_eval_after_train_emits_metrics(self, tmp_path, capsys):
        run_cli(
            ["train", "--pipeline", "v2", "--seeds", "0:6", "--stages", "16x2",
             "--batch", "6", "--out", str(tmp_path / "t")],
            tmp_path,
        )
        capsys.readouterr()
        code = run_cli(
            ["eval", "--checkpoint", str(tmp_path / "t/checkpoint"),
             "--seeds", "100:110", "--metric", "exact_match",
             "--out", str(tmp_path / "e")],
            tmp_path,
        )
        assert code == 0
        with open(tmp_path / "e/eval.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["task", "metric", "value", "checkpoint", "step"]
        assert len(rows) == 2
        assert rows[1][1] == "exact_match"

    def test_corrupt_checkpoint_exit_2_names_array(self, tmp_path, capsys):
        run_cli(
            ["train", "--pipeline", "v2", "--seeds", "0:6", "--stages", "16x2",
             "--batch", "6", "--out", str(tmp_path / "t")],
            tmp_path,
        )
        capsys.readouterr()
        blob = (tmp_path / "t/checkpoint/weights.bin").read_bytes()
        (tmp_path / "t/checkpoint/weights.bin").write_bytes(blob[: len(blob) // 2])
        code = run_cli(
            ["eval", "--checkpoint", str(tmp_path / "t/checkpoint"),
             "--out", str(tmp_path / "e2")],
            tmp_path,
        )
        assert code == 2
        assert "truncated" in capsys.readouterr().err


class TestSweep:
    def test_single_ratio_single_row(self, tmp_path, capsys):
        code = run_cli(
            ["sweep-keep-ratio", "--ratios", "0.5", "--seeds", "0:6",
             "--stages", "16x2", "--batch", "6", "--probe-per-class", "4",
             "--out", str(tmp_path / "s")],
            tmp_path,
        )
        assert code == 0
        with open(tmp_path / "s/sweep.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert float(rows[0]["keep_ratio"]) == 0.5
        assert (tmp_path / "s/sweep.png").exists()


def test_console_script_entrypoint():
    proc = subprocess.run(
        [sys.executable, "-m", "capvit.cli", "cost", "--preset", "L14-224",
         "--pipelines", "v2", "--out", "/tmp/capvit_cli_test"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "L14-224" in proc.stdout
