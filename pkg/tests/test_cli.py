import io
import json
import subprocess
import sys

import numpy as np
import pytest

from posittrain import checkpoint
from posittrain.cli import main

from conftest import TOY_TOPOLOGY


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out)
    return code, out.getvalue()


def usage_code(*argv):
    with pytest.raises(SystemExit) as info:
        main(list(argv), io.StringIO())
    return info.value.code


class TestTable:
    def test_five_one(self):
        code, text = run("table", "--n", "5", "--es", "1")
        lines = text.splitlines()
        assert code == 0 and lines[0] == "bits,regime,exponent,mantissa,value"
        assert len(lines) == 17
        assert lines[1] == "00000,x,x,x,0"
        assert lines[6] == "00101,-1,0,1/2,3/8"
        assert lines[16] == "01111,3,0,0,64"

    def test_two_zero(self):
        assert run("table", "--n", "2", "--es", "0")[1].splitlines()[1:] == ["00,x,x,x,0", "01,0,0,0,1"]

    def test_pretty(self):
        code, text = run("table", "--n", "3", "--es", "0", "--format", "pretty")
        assert code == 0 and text.splitlines()[0].split() == ["bits", "regime", "exponent", "mantissa", "value"]

    def test_too_large(self, capsys):
        assert run("table", "--n", "20", "--es", "1")[0] == 2
        assert "table too large" in capsys.readouterr().err

    def test_bad_flags(self):
        assert usage_code("table", "--n", "5") == 2
        assert usage_code("table", "--n", "five", "--es", "1") == 2
        assert run("table", "--n", "5", "--es", "9")[0] == 2


class TestConvert:
    def test_value(self):
        code, text = run("convert", "--n", "5", "--es", "1", "--value", "0.4")
        assert code == 0
        assert "bits: 00101 (0x05)" in text
        assert "value: 3/8 (0.375)" in text
        assert "rb: 2  eb: 1  fb: 1" in text

    def test_fraction_and_negative(self):
        text = run("convert", "--n", "5", "--es", "1", "--value=-3/2")[1]
        assert "bits: 10111" in text and "value: -3/2" in text
        text = run("convert", "--n", "5", "--es", "1", "--value", "-0.4")[1]
        assert "bits: 11011" in text and "value: -3/8" in text

    def test_bits_nar(self):
        code, text = run("convert", "--n", "5", "--es", "1", "--bits", "0x10")
        assert code == 0 and "value: NaR" in text

    def test_zero(self):
        assert "bits: 00000" in run("convert", "--n", "5", "--es", "1", "--value", "0")[1]

    @pytest.mark.parametrize("extra", [[], ["--value", "1", "--bits", "0x1"], ["--bits", "0x40"], ["--value", "nan"]])
    def test_usage_errors(self, extra):
        assert run("convert", "--n", "5", "--es", "1", *extra)[0] == 2


class TestQuantizeStats:
    def test_quantize(self, tmp_path, capsys):
        src, dst = tmp_path / "in.pstm", tmp_path / "out.pstm"
        checkpoint.save(src, {"w": np.array([1.0, 2.0, 4.0, 8.0]), "z": np.zeros(3), "x": np.array([0.4, 100.0])})
        assert run("quantize", "--n", "8", "--es", "1", "--in", str(src), "--out", str(dst))[0] == 0
        err = capsys.readouterr().err
        assert "w: S_f=16.0 (center=2), mean_rel_err=0.0" in err
        assert "warning: z has no nonzero elements" in err and "z: S_f=4.0" in err
        out = checkpoint.load(dst)
        assert out["w"].tolist() == [1.0, 2.0, 4.0, 8.0]
        assert not out["z"].any()

    def test_quantize_no_scale(self, tmp_path, capsys):
        src, dst = tmp_path / "in.pstm", tmp_path / "out.pstm"
        checkpoint.save(src, {"x": np.array([0.4, 0.01, 100.0])})
        assert run("quantize", "--n", "5", "--es", "1", "--no-scale", "--in", str(src), "--out", str(dst))[0] == 0
        assert checkpoint.load(dst)["x"].tolist() == [0.375, 0.0, 64.0]
        assert "scaling off" in capsys.readouterr().err

    def test_quantize_bad_file(self, tmp_path, capsys):
        (tmp_path / "bad").write_bytes(b"PSTM\x01\x00")
        code = run("quantize", "--n", "8", "--es", "1", "--in", str(tmp_path / "bad"), "--out", str(tmp_path / "o"))[0]
        assert code == 1 and "byte 4" in capsys.readouterr().err

    def test_stats(self, tmp_path):
        src = tmp_path / "t.pstm"
        checkpoint.save(src, {"a": np.array([1.0, 2.0, 4.0]), "b": np.array([0.0, 0.3])})
        assert run("stats", "--in", str(src))[1] == "bin,count\n-2,1\n0,1\n1,1\n2,1\nzeros,1\n"
        assert run("stats", "--in", str(src), "--tensor", "b")[1] == "bin,count\n-2,1\nzeros,1\n"
        assert run("stats", "--in", str(src), "--tensor", "c")[0] == 2
        run("stats", "--in", str(src), "--out", str(tmp_path / "h.csv"))
        assert (tmp_path / "h.csv").read_text().startswith("bin,count\n")


@pytest.fixture
def plan_file(tmp_path, digits_small):
    doc = {
        "model": TOY_TOPOLOGY, "dataset": digits_small, "total_epochs": 2, "warmup_epochs": 1,
        "batch_size": 32, "lr": {"initial": 0.05}, "quant": "posit8", "rng_seed": 0,
    }
    path = tmp_path / "plan.json"
    path.write_text(json.dumps(doc))
    return path


class TestTrainEval:
    def test_train_twice_identical(self, tmp_path, plan_file):
        for d in ("a", "b"):
            assert run("train", "--plan", str(plan_file), "--out", str(tmp_path / d))[0] == 0
        for name in ("metrics.csv", "scale_factors.csv", "model.pstm"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        lines = (tmp_path / "a" / "metrics.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss,val_acc" and len(lines) == 3
        assert (tmp_path / "a" / "scale_factors.csv").read_text().startswith("epoch,layer,class,center,sf\n1,")

    def test_warmup_total_matches_baseline(self, tmp_path, plan_file):
        run("train", "--plan", str(plan_file), "--warmup", "2", "--out", str(tmp_path / "w"))
        run("train", "--plan", str(plan_file), "--quant", "fp32", "--warmup", "0", "--out", str(tmp_path / "f"))
        assert (tmp_path / "w" / "metrics.csv").read_bytes() == (tmp_path / "f" / "metrics.csv").read_bytes()

    def test_seed_override_changes_run(self, tmp_path, plan_file):
        run("train", "--plan", str(plan_file), "--epochs", "1", "--out", str(tmp_path / "a"))
        run("train", "--plan", str(plan_file), "--epochs", "1", "--seed", "5", "--out", str(tmp_path / "b"))
        assert (tmp_path / "a" / "metrics.csv").read_text() != (tmp_path / "b" / "metrics.csv").read_text()

    def test_eval(self, tmp_path, plan_file):
        run("train", "--plan", str(plan_file), "--out", str(tmp_path / "r"))
        code, text = run("eval", "--plan", str(plan_file), "--checkpoint", str(tmp_path / "r" / "model.pstm"),
                         "--out", str(tmp_path / "acc.csv"))
        assert code == 0 and text.startswith("val_acc=")
        acc = float(text.split("=")[1])
        assert 0 <= acc <= 1
        assert (tmp_path / "acc.csv").read_text() == f"val_acc\n{acc!r}\n"

    def test_errors(self, tmp_path, plan_file, capsys):
        assert run("train", "--plan", str(tmp_path / "missing.json"))[0] == 2
        assert run("train", "--plan", str(plan_file), "--warmup", "5")[0] == 2
        assert run("train", "--plan", str(plan_file), "--quant", "posit3")[0] == 2
        doc = json.loads(plan_file.read_text())
        doc["dataset"]["train_images"] = str(tmp_path / "nope")
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(doc))
        assert run("train", "--plan", str(bad), "--out", str(tmp_path / "x"))[0] == 1
        assert run("eval", "--plan", str(plan_file), "--checkpoint", str(tmp_path / "none.pstm"))[0] == 1


class TestHwVerify:
    def test_exhaustive_small(self):
        code, text = run("hw-verify", "--n", "6", "--es", "1")
        assert code == 0 and text.endswith("RESULT: PASS\n")
        assert "decoder: 64/64 PASS" in text and "mac: 4096 pairs PASS" in text

    def test_sampled(self):
        code, text = run("hw-verify", "--n", "24", "--es", "2", "--samples", "200")
        assert code == 0 and "RESULT: PASS" in text

    def test_refuses_large_exhaustive(self, capsys):
        assert run("hw-verify", "--n", "32", "--es", "2", "--exhaustive")[0] == 2
        assert "--samples" in capsys.readouterr().err
        assert usage_code("hw-verify", "--n", "8", "--es", "1", "--exhaustive", "--samples", "3") == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "posittrain", "convert", "--n", "5", "--es", "1", "--value", "3"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "bits: 01011" in proc.stdout
