"""The ``hfq`` command line: every subcommand, determinism, exit codes."""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from hfqformer.checkpoint import read_checkpoint
from hfqformer.cli import main
from hfqformer.frontend import SyntheticSpec, WaveBuffer, read_features, synth_features, write_features, write_wav

SMALL = {"d_model": 8, "heads": 2, "queries_per_stage": 3, "compressed_tokens": 2}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    t = np.arange(16000 * 2) / 16000
    write_wav(d / "a.wav", WaveBuffer((0.3 * np.sin(2 * np.pi * 700 * t)).astype(np.float32)))
    write_features(d / "f.f32", synth_features(SyntheticSpec(0, 65.0, 64, class_id=1)))
    (d / "small.json").write_text(json.dumps(SMALL))
    assert main(["train-toy", "--out-dir", str(d / "run"), "--steps", "5", "--examples-per-class", "4"]) == 0
    return d


def run_twice(argv_for, work, name):
    blobs = []
    for i in range(2):
        out = work / f"{name}{i}"
        assert main(argv_for(out)) == 0
        blobs.append(out.read_bytes())
    return blobs


class TestSubcommands:
    def test_featurize_mel(self, work):
        assert main(["featurize", "--wav", str(work / "a.wav"), "--out", str(work / "mel.f32"), "--mel-only"]) == 0
        assert read_features(work / "mel.f32").shape == (198, 16)

    def test_featurize_encoder(self, work, capsys):
        assert main(["featurize", "--wav", str(work / "a.wav"), "--out", str(work / "enc.f32"), "--seed", "1"]) == 0
        assert read_features(work / "enc.f32").shape == (99, 64)
        echoed = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert echoed["effective_config"]["d_model"] == 64

    def test_compress(self, work):
        assert main(["compress", "--features", str(work / "f.f32"), "--out", str(work / "t.json")]) == 0
        payload = json.loads((work / "t.json").read_text())
        assert payload["num_windows"] == 3 and payload["total_tokens"] == 15
        w = payload["windows"][2]
        assert np.array(w["tokens"]).shape == (5, 64)
        assert w["source_duration_sec"] == pytest.approx(5.0)
        assert sum(w["stage_attention_mass"]) == pytest.approx(1.0, abs=1e-5)

    def test_compress_flag_overrides(self, work, capsys):
        argv = ["compress", "--features", str(work / "f.f32"), "--out", str(work / "t2.json"), "--num-stages", "2"]
        assert main(argv) == 0
        assert len(json.loads((work / "t2.json").read_text())["windows"][0]["stage_attention_mass"]) == 2
        assert '"num_stages": 2' in capsys.readouterr().err

    def test_attn_map(self, work):
        argv = ["attn-map", "--checkpoint", str(work / "run" / "checkpoint.hfqc"),
                "--features", str(work / "f.f32"), "--out", str(work / "m.csv")]
        assert main(argv) == 0
        rows = list(csv.DictReader((work / "m.csv").open()))
        assert list(rows[0]) == ["window_index", "stage", "mass"]
        assert len(rows) == 9
        for w in range(3):
            assert sum(float(r["mass"]) for r in rows if r["window_index"] == str(w)) == pytest.approx(1.0, abs=1e-5)

    def test_attn_map_wrong_config(self, work, capsys):
        argv = ["attn-map", "--checkpoint", str(work / "run" / "checkpoint.hfqc"), "--num-stages", "2",
                "--features", str(work / "f.f32"), "--out", str(work / "m2.csv")]
        assert main(argv) == 0  # stage3 tensors are simply unused by a 2-stage model
        argv = ["attn-map", "--checkpoint", str(work / "run" / "checkpoint.hfqc"), "--config", str(work / "small.json"),
                "--features", str(work / "f.f32"), "--out", str(work / "m3.csv")]
        assert main(argv) == 2
        assert "stage1.queries" in capsys.readouterr().err

    def test_cost(self, capsys):
        assert main(["cost", "--adapter", "hfq", "--duration", "300", "--llm", "qwen3-4b-like"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["speech_tokens"] == 500
        assert report["flops_estimate"] == pytest.approx(2.03e12)

    def test_bench(self, work):
        argv = ["bench", "--durations", "60,300,1800,28800", "--adapters", "all", "--out", str(work / "sweep.csv")]
        assert main(argv) == 0
        rows = list(csv.DictReader((work / "sweep.csv").open()))
        assert len(rows) == 16
        assert [int(r["tokens"]) for r in rows if r["adapter"] == "hfq"] == [100, 500, 3000, 48000]

    def test_bench_subset(self, capsys):
        assert main(["bench", "--durations", "30,60", "--adapters", "hfq"]) == 0
        assert capsys.readouterr().out.splitlines()[1:] == ["30,hfq,50,203000000000,7372800", "60,hfq,100,406000000000,14745600"]

    def test_train_toy_outputs(self, work):
        run = work / "run"
        assert sorted(p.name for p in run.iterdir()) == ["checkpoint.hfqc", "summary.json", "train_log.csv"]
        summary = json.loads((run / "summary.json").read_text())
        assert summary["steps"] == 5
        assert "head.proj.weight" in read_checkpoint(run / "checkpoint.hfqc")

    def test_gradcheck(self, work, capsys):
        assert main(["gradcheck", "--config", str(work / "small.json")]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert [l.split()[0] for l in lines] == ["encoder", "stage1", "stage2", "stage3", "distill", "recovery", "head"]
        assert all(l.endswith("ok") for l in lines)

    def test_gradcheck_failure_exit_code(self, work, capsys):
        # a huge two-point step makes the oracle itself inaccurate: must report failure, exit 3
        assert main(["gradcheck", "--config", str(work / "small.json"), "--step", "0.5", "--order", "2"]) == 3
        assert "FAIL" in capsys.readouterr().out

    def test_prompt(self, capsys):
        assert main(["prompt", "--task", "SQQA", "--language", "KO", "--text", "Who spoke?"]) == 0
        assert capsys.readouterr().out == "User: <|audio_bos|><|AUDIO|><|audio_eos|><|KO|><|SQQA|>Who spoke?\nAssistant:\n"
        assert main(["prompt", "--task", "AST", "--language", "EN", "--text", "x", "--no-language-tag"]) == 0
        assert "<|EN|>" not in capsys.readouterr().out

    def test_params(self, capsys):
        assert main(["params"]) == 0
        assert main(["params", "--config", "paper"]) == 0
        assert capsys.readouterr().out.split() == ["167808", "65949440"]


class TestDeterminism:
    def test_featurize(self, work):
        a, b = run_twice(lambda o: ["featurize", "--wav", str(work / "a.wav"), "--out", str(o), "--seed", "3"], work, "fz")
        assert a == b

    def test_compress(self, work):
        a, b = run_twice(lambda o: ["compress", "--features", str(work / "f.f32"), "--out", str(o), "--seed", "3"], work, "cp")
        assert a == b

    def test_attn_map(self, work):
        ckpt = str(work / "run" / "checkpoint.hfqc")
        argv = lambda o: ["attn-map", "--checkpoint", ckpt, "--features", str(work / "f.f32"), "--out", str(o), "--seed", "3"]
        a, b = run_twice(argv, work, "am")
        assert a == b

    def test_train_toy(self, work):
        for i in range(2):
            argv = ["train-toy", "--out-dir", str(work / f"tt{i}"), "--steps", "5", "--examples-per-class", "4", "--seed", "2"]
            assert main(argv) == 0
        for name in ("checkpoint.hfqc", "train_log.csv", "summary.json"):
            assert (work / "tt0" / name).read_bytes() == (work / "tt1" / name).read_bytes()

    def test_seed_changes_output_and_env_default(self, work, monkeypatch):
        main(["compress", "--features", str(work / "f.f32"), "--out", str(work / "s0"), "--seed", "0"])
        main(["compress", "--features", str(work / "f.f32"), "--out", str(work / "s5"), "--seed", "5"])
        monkeypatch.setenv("HFQ_SEED", "5")
        main(["compress", "--features", str(work / "f.f32"), "--out", str(work / "env5")])
        assert (work / "s0").read_bytes() != (work / "s5").read_bytes()
        assert (work / "env5").read_bytes() == (work / "s5").read_bytes()


class TestExitCodes:
    def test_domain_error(self):
        assert main(["cost", "--duration", "-1"]) == 2

    def test_missing_file(self, work):
        assert main(["compress", "--features", str(work / "nope.f32"), "--out", str(work / "x")]) == 2

    def test_bad_config(self, work):
        (work / "bad.json").write_text('{"d_model": 64, "dropout": 0.1}')
        assert main(["params", "--config", str(work / "bad.json")]) == 2

    def test_width_mismatch(self, work):
        assert main(["compress", "--features", str(work / "f.f32"), "--out", str(work / "x"), "--config", str(work / "small.json")]) == 2

    def test_bad_wav(self, work):
        (work / "bad.wav").write_bytes(b"RIFF....junk")
        assert main(["featurize", "--wav", str(work / "bad.wav"), "--out", str(work / "x")]) == 2

    def test_bad_durations(self):
        assert main(["bench", "--durations", "60,abc"]) == 2

    def test_argparse_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["cost"])
        assert info.value.code == 2

    def test_console_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "hfqformer.cli", "cost", "--duration", "30"],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 0
        assert json.loads(proc.stdout)["speech_tokens"] == 50
