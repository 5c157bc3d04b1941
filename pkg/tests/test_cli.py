import json
import os
import subprocess
import sys

import numpy as np
import pytest
from click.testing import CliRunner

from nvsd import cli
from nvsd.audio import read_wav
from nvsd.events import PostProcConfig, process
from nvsd.model import StreamingSession, forward, load_weights
from nvsd.audio import compute_features


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small end-to-end workspace: corpus, trained tiny model, postproc."""
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()

    spec = {"users": 3, "eval_users": 1, "repetitions": 4,
            "aggressor_clips": 3, "aggressor_duration_s": 5.0}
    (root / "spec.json").write_text(json.dumps(spec))
    res = runner.invoke(cli.main, ["synth", "--spec", str(root / "spec.json"),
                                   "--out", str(root / "corpus")])
    assert res.exit_code == 0, res.output

    cfg = {"spec": {"nodes": 32, "groups": 2, "num_blocks": 2},
           "train": {"epochs": 2, "steps_per_epoch": 6, "seed": 0,
                     "batch_frames": 500}}
    (root / "train.json").write_text(json.dumps(cfg))
    res = runner.invoke(cli.main, [
        "train", "--corpus", str(root / "corpus" / "train"),
        "--aggressors", str(root / "corpus" / "aggressors"),
        "--config", str(root / "train.json"),
        "--out", str(root / "model.nvsd")])
    assert res.exit_code == 0, res.output
    return root


class TestSynth:
    def test_dump_defaults(self):
        res = CliRunner().invoke(cli.main, ["synth", "--dump-defaults"])
        assert res.exit_code == 0
        d = json.loads(res.output)
        assert d["users"] == 12 and d["repetitions"] == 10

    def test_corpus_layout(self, workspace):
        for sub in ["train", "eval", "aggressors", "aggr_eval"]:
            d = workspace / "corpus" / sub
            assert (d / "labels.jsonl").exists()
            assert list(d.glob("*.wav"))


class TestTrain:
    def test_sidecar_written(self, workspace):
        sidecar = json.loads((workspace / "model.nvsd.json").read_text())
        assert len(sidecar["history"]) == 2
        assert "best_epoch" in sidecar

    def test_model_loads(self, workspace):
        w = load_weights(workspace / "model.nvsd")
        assert w.spec.nodes == 32

    def test_dump_defaults(self):
        res = CliRunner().invoke(cli.main, ["train", "--dump-defaults",
                                            "--corpus", ".", "--out", "x"])
        assert res.exit_code == 0
        d = json.loads(res.output)
        assert d["train"]["batch_frames"] == 1000
        assert d["spec"]["nodes"] == 256


class TestEval:
    def test_json_schema(self, workspace):
        res = CliRunner().invoke(cli.main, [
            "eval", "--model", str(workspace / "model.nvsd"),
            "--eval", str(workspace / "corpus" / "eval")])
        assert res.exit_code == 0, res.output
        d, _ = json.JSONDecoder().raw_decode(res.output)
        for key in ["precision", "recall", "f1", "confusion", "fp_per_hour",
                    "latency_mean_ms", "duration_s"]:
            assert key in d

    def test_one_active_flag(self, workspace):
        res = CliRunner().invoke(cli.main, [
            "eval", "--model", str(workspace / "model.nvsd"),
            "--eval", str(workspace / "corpus" / "eval"), "--one-active"])
        assert res.exit_code == 0, res.output


class TestOptimize:
    def test_writes_config_within_grid(self, workspace):
        out = workspace / "postproc.json"
        res = CliRunner().invoke(cli.main, [
            "optimize", "--model", str(workspace / "model.nvsd"),
            "--eval", str(workspace / "corpus" / "eval"),
            "--aggressors", str(workspace / "corpus" / "aggr_eval"),
            "--out", str(out)])
        assert res.exit_code == 0, res.output
        cfg = PostProcConfig.from_dict(json.loads(out.read_text()))
        for c in range(5):
            assert 0.40 <= cfg.theta[c] <= 0.60
            assert 7 <= cfg.tau[c] <= 15


class TestDetect:
    def test_wav_matches_library(self, workspace):
        wav = sorted((workspace / "corpus" / "eval").glob("*.wav"))[0]
        res = CliRunner().invoke(cli.main, [
            "detect", "--model", str(workspace / "model.nvsd"),
            "--wav", str(wav)])
        assert res.exit_code == 0, res.output
        got = [json.loads(line) for line in res.output.splitlines() if line]

        w = load_weights(workspace / "model.nvsd")
        probs, _ = forward(w, compute_features(read_wav(wav)))
        want = process(probs, PostProcConfig())
        assert [(e["frame"]) for e in got] == [e.frame for e in want]
        assert [(e["class"]) for e in got] == \
            [w.class_names[e.cls] for e in want]

    def test_chunking_invariance(self, workspace):
        wav = sorted((workspace / "corpus" / "eval").glob("*.wav"))[0]
        outputs = []
        for chunk_frames in ["1", "10", "37"]:
            res = CliRunner().invoke(cli.main, [
                "detect", "--model", str(workspace / "model.nvsd"),
                "--wav", str(wav), "--chunk-frames", chunk_frames])
            assert res.exit_code == 0, res.output
            outputs.append(res.output)
        assert outputs[0] == outputs[1] == outputs[2]

    def test_stdin_pcm_matches_wav_replay(self, workspace):
        wav = sorted((workspace / "corpus" / "eval").glob("*.wav"))[0]
        pcm = (np.clip(np.round(read_wav(wav).samples * 32767), -32768, 32767)
               .astype("<i2").tobytes())
        proc = subprocess.run(
            [sys.executable, "-m", "nvsd.cli", "detect",
             "--model", str(workspace / "model.nvsd"), "--stdin-pcm"],
            input=pcm, capture_output=True)
        assert proc.returncode == 0, proc.stderr
        res = CliRunner().invoke(cli.main, [
            "detect", "--model", str(workspace / "model.nvsd"),
            "--wav", str(wav)])
        assert proc.stdout.decode() == res.output

    def test_requires_exactly_one_source(self, workspace):
        res = CliRunner().invoke(cli.main, [
            "detect", "--model", str(workspace / "model.nvsd")])
        assert res.exit_code == 1


class TestPersonalizeAndAudit:
    def test_personalize_round_trip(self, workspace):
        wav = sorted((workspace / "corpus" / "eval").glob("*tone300*.wav"))[0]
        out = workspace / "user.nvsd"
        res = CliRunner().invoke(cli.main, [
            "personalize", "--model", str(workspace / "model.nvsd"),
            "--enroll", str(wav), "--class", "pop", "--shots", "3",
            "--user-id", "u9", "--out", str(out)])
        assert res.exit_code == 0, res.output
        w = load_weights(out)
        assert w.user_id == "u9"

    def test_audit_reports_each_clip(self, workspace):
        res = CliRunner().invoke(cli.main, [
            "audit", "--model", str(workspace / "model.nvsd"),
            "--corpus", str(workspace / "corpus" / "eval")])
        assert res.exit_code == 0, res.output
        lines = [json.loads(l) for l in res.output.splitlines() if l]
        records = [r for r in lines if "clip" in r]
        assert len(records) == 5    # one per eval clip
        for rec in records:
            assert {"clip", "given", "predicted", "confidence",
                    "flagged"} <= set(rec)


class TestErrors:
    def test_unknown_class_is_single_line_json(self, workspace):
        res = CliRunner().invoke(cli.main, [
            "annotate", "--in", str(workspace / "corpus" / "eval"),
            "--class", "nosuch"])
        assert res.exit_code == 1

    def test_missing_model_file(self, tmp_path):
        res = CliRunner().invoke(cli.main, [
            "eval", "--model", str(tmp_path / "none.nvsd"),
            "--eval", str(tmp_path)])
        assert res.exit_code != 0
