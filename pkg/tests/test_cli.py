import csv
import io
import json
import shutil
import subprocess
import sys

import pytest

from fetr.cli import main

TINY = """
[model]
input_size = 16
[train]
epochs = 3
batch_size = 8
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def stream(out):
    return [json.loads(line) for line in out.splitlines()]


def train(capsys, cfg, data, out, *extra):
    return run(capsys, "train", "--config", cfg, "--data", data, "--out", out, "--no-timing", *extra)


class TestTrain:
    def test_metrics_stream_and_checkpoints(self, capsys, cfg, synth_small, tmp_path):
        code, out, err = train(capsys, cfg, synth_small, tmp_path / "o", "--seed", 7)
        assert code == 0
        rows = stream(out)
        assert [r["epoch"] for r in rows] == [1, 2, 3]
        assert set(rows[0]) == {"epoch", "lr", "train_loss", "train_top1", "train_top5", "val_top1", "val_top5", "wall_seconds"}
        assert all(r["wall_seconds"] is None for r in rows)
        assert (tmp_path / "o" / "best.fetr").is_file() and (tmp_path / "o" / "last.fetr").is_file()
        assert "wrote" in err

    def test_timing_reported_by_default(self, capsys, cfg, synth_small, tmp_path):
        code, out, _ = run(capsys, "train", "--config", cfg, "--data", synth_small, "--out", tmp_path, "--epochs", 1)
        assert code == 0 and stream(out)[0]["wall_seconds"] >= 0

    def test_same_seed_is_byte_identical(self, capsys, cfg, synth_small, tmp_path):
        outs = [train(capsys, cfg, synth_small, tmp_path / d, "--seed", 7)[1] for d in "ab"]
        assert outs[0] == outs[1]
        for name in ("best.fetr", "last.fetr"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_matters(self, capsys, cfg, synth_small, tmp_path):
        a = train(capsys, cfg, synth_small, tmp_path / "a", "--seed", 1)[1]
        b = train(capsys, cfg, synth_small, tmp_path / "b", "--seed", 2)[1]
        assert a != b

    def test_global_flags_before_subcommand(self, capsys, cfg, synth_small, tmp_path):
        after = train(capsys, cfg, synth_small, tmp_path / "a", "--seed", 5)[1]
        code, before, err = run(
            capsys, "--seed", 5, "--quiet", "train", "--config", cfg, "--data", synth_small, "--out", tmp_path / "b", "--no-timing"
        )
        assert code == 0 and before == after and err == ""

    def test_resume_equivalence(self, capsys, cfg, synth_small, tmp_path):
        full = train(capsys, cfg, synth_small, tmp_path / "full", "--seed", 3)[1]
        first = train(capsys, cfg, synth_small, tmp_path / "part", "--seed", 3, "--stop-after", 1)[1]
        rest = train(capsys, cfg, synth_small, tmp_path / "part", "--resume", tmp_path / "part" / "last.fetr")[1]
        assert first + rest == full
        assert (tmp_path / "full" / "last.fetr").read_bytes() == (tmp_path / "part" / "last.fetr").read_bytes()

    def test_resume_rejects_model_change(self, capsys, cfg, synth_small, tmp_path):
        train(capsys, cfg, synth_small, tmp_path, "--stop-after", 1)
        code, _, err = train(capsys, cfg, synth_small, tmp_path, "--resume", tmp_path / "last.fetr", "--width", 8)
        assert code == 2 and "resuming" in err

    def test_checkpoint_every(self, capsys, cfg, synth_small, tmp_path):
        code, _, err = train(capsys, cfg, synth_small, tmp_path, "--checkpoint-every", 2)
        assert code == 0
        assert err.count("last.fetr") == 2  # after epoch 2 and at the final epoch 3

    def test_missing_data_dir(self, capsys, cfg, tmp_path):
        code, out, err = train(capsys, cfg, tmp_path / "absent", tmp_path / "o")
        assert code == 2 and "absent" in err and out == ""

    def test_bad_config_value(self, capsys, synth_small, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[train]\nlr = banana\n")
        code, _, err = train(capsys, bad, synth_small, tmp_path / "o")
        assert code == 2 and "line 2" in err

    def test_bad_flag_value(self, capsys, synth_small, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--data", str(synth_small), "--out", str(tmp_path), "--lr", "banana"])
        assert exc.value.code == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_gradient_exit(self, capsys, cfg, synth_small, tmp_path):
        code, _, err = train(capsys, cfg, synth_small, tmp_path, "--lr", "1e300", "--optimizer", "sgd", "--epochs", 2)
        assert code == 5 and "non-finite gradient" in err


@pytest.fixture
def trained_run(capsys, cfg, synth_small, tmp_path):
    _, out, _ = train(capsys, cfg, synth_small, tmp_path / "run", "--seed", 7)
    return tmp_path / "run", stream(out)


class TestEval:
    def test_reproduces_logged_val_numbers(self, capsys, synth_small, trained_run):
        out_dir, rows = trained_run
        code, out, _ = run(capsys, "eval", "--checkpoint", out_dir / "last.fetr", "--data", synth_small)
        m = json.loads(out)
        assert code == 0
        assert (m["top1"], m["top5"]) == (rows[-1]["val_top1"], rows[-1]["val_top5"])

    def test_topk_and_per_class(self, capsys, synth_small, trained_run, tmp_path):
        out_dir, _ = trained_run
        target = tmp_path / "pc.csv"
        code, out, _ = run(
            capsys, "eval", "--checkpoint", out_dir / "best.fetr", "--data", synth_small, "--topk", "1,2", "--per-class", target, "--split", "all"
        )
        m = json.loads(out)
        assert code == 0 and set(m["topk"]) >= {"1", "2"} and m["num_samples"] == 32
        rows = list(csv.reader(io.StringIO(target.read_text())))
        assert rows[0] == ["class", "tp", "fp", "fn", "precision", "recall", "f1"] and len(rows) == 5

    def test_corrupt_magic(self, capsys, synth_small, trained_run, tmp_path):
        out_dir, _ = trained_run
        broken = tmp_path / "broken.fetr"
        broken.write_bytes(b"NOPE" + (out_dir / "last.fetr").read_bytes()[4:])
        code, _, err = run(capsys, "eval", "--checkpoint", broken, "--data", synth_small)
        assert code == 4 and "bad checkpoint header" in err

    def test_class_mismatch(self, capsys, trained_run, tmp_path):
        out_dir, _ = trained_run
        other = tmp_path / "other"
        assert run(capsys, "synth", "--classes", 3, "--per-class", 4, "--size", 16, "--out", other)[0] == 0
        code, _, err = run(capsys, "eval", "--checkpoint", out_dir / "last.fetr", "--data", other)
        assert code == 3 and "classes" in err


class TestBenchSynth:
    def test_bench_rows(self, capsys):
        code, out, _ = run(capsys, "bench", "--sizes", "4,6", "--channels", 8, "--repeats", 3)
        rows = list(csv.reader(io.StringIO(out)))
        assert code == 0 and len(rows) == 3 and rows[0][0] == "H"

    def test_bench_to_file(self, capsys, tmp_path):
        code, out, _ = run(capsys, "bench", "--sizes", "4", "--channels", 8, "--repeats", 3, "--out", tmp_path / "b.csv")
        assert code == 0 and out == "" and (tmp_path / "b.csv").read_text().startswith("H,W,C,Cprime")

    def test_bench_bad_repeats(self, capsys):
        assert run(capsys, "bench", "--sizes", "4", "--repeats", 2)[0] == 1

    def test_synth_replay(self, capsys, tmp_path):
        args = ("synth", "--classes", 3, "--per-class", 4, "--size", 16, "--seed", 1, "--out")
        a = json.loads(run(capsys, *args, tmp_path / "a")[1])
        b = json.loads(run(capsys, *args, tmp_path / "b")[1])
        assert a["files"] == 12 and a["classes"] == 3
        assert a["manifest_hash"] == b["manifest_hash"] and a["content_hash"] == b["content_hash"]

    def test_synth_invalid(self, capsys, tmp_path):
        assert run(capsys, "synth", "--classes", 1, "--out", tmp_path)[0] == 2


@pytest.mark.skipif(shutil.which("fetr") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(
        ["fetr", "synth", "--classes", "2", "--per-class", "2", "--size", "16", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0 and json.loads(proc.stdout)["files"] == 4


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fetr.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "train" in proc.stdout
