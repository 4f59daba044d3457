import filecmp
import json
import os
import subprocess
import sys

import pytest

CLI = [sys.executable, "-m", "hepatex.cli"]


def run(args, **kw):
    env = dict(os.environ, PYTHONWARNINGS="ignore::UserWarning")
    return subprocess.run(CLI + args, capture_output=True, text=True, env=env, **kw)


def trees_identical(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(
        a, b, cmp.common_files, shallow=False)
    if mismatch or errors:
        return False
    return all(trees_identical(os.path.join(a, d), os.path.join(b, d))
               for d in cmp.common_dirs)


class TestGen:
    def test_gen_twice_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            r = run(["gen", "--n", "6", "--mix", "0.5,0.1,0.2,0.2", "--seed", "3",
                     "--out", str(tmp_path / sub)])
            assert r.returncode == 0, r.stderr
        assert trees_identical(str(tmp_path / "a"), str(tmp_path / "b"))

    def test_bad_mix_rejected(self, tmp_path):
        r = run(["gen", "--n", "4", "--mix", "0.5,0.5", "--seed", "0",
                 "--out", str(tmp_path / "x")])
        assert r.returncode == 1
        assert r.stderr.startswith("error: ")


class TestGradcheckCommand:
    def test_clean_build_passes(self):
        r = run(["gradcheck", "--seeds", "2"])
        assert r.returncode == 0, r.stdout + r.stderr
        assert "FAIL" not in r.stdout

    def test_planted_bug_detected(self):
        r = run(["gradcheck", "--seeds", "2", "--plant-bug", "texture_encoding"])
        assert r.returncode == 1
        assert "FAIL" in r.stdout


class TestConfigHandling:
    def test_unknown_config_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"no_such_knob": 1}))
        r = run(["gen", "--n", "2", "--seed", "0", "--out", str(tmp_path / "c")])
        assert r.returncode == 0
        r = run(["train-detector", "--corpus", str(tmp_path / "c"),
                 "--config", str(cfg), "--out", str(tmp_path / "d.ckpt")])
        assert r.returncode == 1
        assert "unknown keys" in r.stderr


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    """A tiny corpus plus detector/candidates shared by the slower CLI tests."""
    root = tmp_path_factory.mktemp("cliwork")
    corpus = str(root / "corpus")
    r = run(["gen", "--n", "8", "--mix", "0.25,0.25,0.25,0.25", "--seed", "5",
             "--out", corpus])
    assert r.returncode == 0, r.stderr
    cfg = {"detector_epochs": 4, "epochs": 2, "head_epochs": 30, "train_slices": 2}
    cfg_path = str(root / "cfg.json")
    with open(cfg_path, "w") as f:
        json.dump(cfg, f)
    det = str(root / "det.ckpt")
    r = run(["train-detector", "--corpus", corpus, "--config", cfg_path, "--out", det])
    assert r.returncode == 0, r.stderr
    cands = str(root / "cands.csv")
    r = run(["detect", "--corpus", corpus, "--config", cfg_path,
             "--detector", det, "--out", cands])
    assert r.returncode == 0, r.stderr
    return {"root": root, "corpus": corpus, "cfg": cfg_path, "det": det,
            "cands": cands}


class TestPipelineCommands:
    def test_detector_training_reproducible(self, small_corpus):
        out2 = str(small_corpus["root"] / "det2.ckpt")
        r = run(["train-detector", "--corpus", small_corpus["corpus"],
                 "--config", small_corpus["cfg"], "--out", out2])
        assert r.returncode == 0
        assert open(small_corpus["det"], "rb").read() == open(out2, "rb").read()

    def test_detect_reproducible(self, small_corpus):
        out2 = str(small_corpus["root"] / "cands2.csv")
        r = run(["detect", "--corpus", small_corpus["corpus"],
                 "--config", small_corpus["cfg"], "--detector",
                 small_corpus["det"], "--out", out2])
        assert r.returncode == 0
        assert open(small_corpus["cands"]).read() == open(out2).read()

    def test_harvest_pts_classify_eval(self, small_corpus):
        root = small_corpus["root"]
        sessions = str(root / "sessions")
        r = run(["harvest", "--corpus", small_corpus["corpus"], "--config",
                 small_corpus["cfg"], "--candidates", small_corpus["cands"],
                 "--out", sessions, "--auto-review"])
        assert r.returncode == 0, r.stderr
        assert "sessions" in r.stdout

        ksf = str(root / "ksf.ckpt")
        r = run(["train-classifier", "--corpus", small_corpus["corpus"], "--config",
                 small_corpus["cfg"], "--mode", "ksf", "--sessions", sessions,
                 "--out", ksf])
        assert r.returncode == 0, r.stderr

        pts = str(root / "pts.json")
        r = run(["pts", "--corpus", small_corpus["corpus"], "--config",
                 small_corpus["cfg"], "--candidates", small_corpus["cands"],
                 "--ksf", ksf, "--out", pts])
        assert r.returncode == 0, r.stderr

        model = str(root / "sadt.ckpt")
        r = run(["train-classifier", "--corpus", small_corpus["corpus"], "--config",
                 small_corpus["cfg"], "--mode", "sadt", "--out", model])
        assert r.returncode == 0, r.stderr

        preds = str(root / "preds.json")
        r = run(["classify", "--corpus", small_corpus["corpus"], "--config",
                 small_corpus["cfg"], "--pts", pts, "--model", model,
                 "--split", "all", "--out", preds])
        assert r.returncode == 0, r.stderr
        payload = json.load(open(preds))
        assert len(payload["predictions"]) == 8  # one per study, always

        report = str(root / "report.txt")
        r = run(["eval", "--corpus", small_corpus["corpus"], "--config",
                 small_corpus["cfg"], "--predictions", preds, "--candidates",
                 small_corpus["cands"], "--pts", pts, "--sessions", sessions,
                 "--split", "all", "--out", report])
        assert r.returncode == 0, r.stderr
        text = open(report).read()
        for key in ("accuracy", "mean_f1", "p1td_1", "p1td_10",
                    "key_slice_hit_rate", "labor_savings_fraction"):
            assert key in text

        report2 = str(root / "report2.txt")
        r = run(["eval", "--corpus", small_corpus["corpus"], "--config",
                 small_corpus["cfg"], "--predictions", preds, "--candidates",
                 small_corpus["cands"], "--pts", pts, "--sessions", sessions,
                 "--split", "all", "--out", report2])
        assert r.returncode == 0
        assert open(report).read() == open(report2).read()

    def test_missing_manifest_one_line_error(self, small_corpus):
        r = run(["train-detector", "--corpus", "/nonexistent", "--out", "/tmp/x.ckpt"])
        assert r.returncode == 1
        assert r.stderr.count("\n") == 1
        assert r.stderr.startswith("error: no-manifest:")
