import json

import numpy as np
import pytest

from ecog2speech import ctsr
from ecog2speech.cli import main
from ecog2speech.data import load_session
from ecog2speech.synth import synth_raw_ecog

TINY = {"stimuli": {"words": 4, "reps": 3}, "model": {"variant": "linear"},
        "train": {"max_epochs": 2, "max_batches": 3, "hop": 10, "batch_size": 16}}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 and out.strip().startswith("{") else out), err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "cfg.json").write_text(json.dumps(TINY))
    assert main(["synth", "--config", str(root / "cfg.json"), "--out", str(root / "sess"), "--audio"]) == 0
    assert main(["train", "--session", str(root / "sess"), "--config", str(root / "cfg.json"),
                 "--out", str(root / "tr")]) == 0
    return root


def test_info_reports_receptive_field(capsys):
    code, out, _ = run(capsys, "info", "--variant", "wavenet")
    assert code == 0
    assert out.splitlines()[0] == "receptive_field_frames: 94 (940 ms)"
    assert out.splitlines()[1] == "params: 72704"
    code, info, _ = run(capsys, "info", "--variant", "linear", "--json")
    assert info["receptive_field_frames"] == 124 and info["params"] == 253984
    assert sum(r["count"] for r in info["layers"]) == info["params"]


def test_synth_and_train_outputs(workspace):
    rec, meta = load_session(workspace / "sess")
    assert rec.ecog.num_frames == rec.spec.num_frames and len(rec.annotations) == 12
    assert (workspace / "sess" / "stimuli.wav").exists()
    assert (workspace / "tr" / "checkpoint" / "norm_stats.ctsr").exists()
    rep = json.loads((workspace / "tr" / "report.json").read_text())
    assert len(rep["train_history"]) == 2


def test_eval_reproduces_training_report(capsys, workspace):
    code, out, _ = run(capsys, "eval", "--checkpoint", workspace / "tr" / "checkpoint",
                       "--session", workspace / "sess")
    rep = json.loads((workspace / "tr" / "report.json").read_text())
    assert code == 0
    assert out["cc_mean"] == pytest.approx(rep["cc_mean"], abs=1e-9)


def test_probe_then_invert(capsys, workspace, tmp_path):
    code, out, _ = run(capsys, "probe", "--checkpoint", workspace / "tr" / "checkpoint",
                       "--out", tmp_path / "pr", "--iterations", 2)
    assert code == 0 and out["electrodes"] == 64 and out["units"] == "spectrogram"
    code, out, _ = run(capsys, "invert", "--spec", tmp_path / "pr" / "elec_03.ctsr",
                       "--out", tmp_path / "x.wav", "--iterations", 2)
    assert code == 0 and out["samples"] == 100 * 240


def test_crossval_parallel_matches_serial(capsys, workspace, tmp_path):
    args = ["crossval", "--session", workspace / "sess", "--config", workspace / "cfg.json"]
    code, serial, _ = run(capsys, *args, "--out", tmp_path / "a")
    assert code == 0
    code, par, _ = run(capsys, *args, "--out", tmp_path / "b", "--jobs", 2)
    assert code == 0
    assert serial["cc_mean"] == pytest.approx(par["cc_mean"], abs=1e-12)
    assert sorted(p.name for p in (tmp_path / "b").iterdir()) == [
        "experiment.json", "fold_0", "fold_1", "fold_2", "mean_report.json"]


def test_preprocess_prints_lag_and_frames(capsys, workspace, tmp_path):
    rec, _ = load_session(workspace / "sess")
    ctsr.save(tmp_path / "raw.ctsr", synth_raw_ecog(rec.ecog.values), {"sample_rate": 3051})
    code, out, _ = run(capsys, "preprocess", "--audio", workspace / "sess" / "stimuli.wav",
                       "--ecog", tmp_path / "raw.ctsr", "--out", tmp_path / "pp")
    assert code == 0
    assert out["lag_ms"] == 168.0 and out["speech_frames"] == out["ecog_frames"]


def test_preprocess_rate_mismatch(capsys, workspace, tmp_path):
    ctsr.save(tmp_path / "raw.ctsr", np.zeros((64, 3000), np.float32), {"sample_rate": 2000})
    code, _, err = run(capsys, "preprocess", "--audio", workspace / "sess" / "stimuli.wav",
                       "--ecog", tmp_path / "raw.ctsr", "--out", tmp_path / "pp")
    assert code == 2
    assert json.loads(err)["path"] == "/dsp/ecog_rate"


def test_refuses_to_overwrite_without_force(capsys, workspace):
    code, _, err = run(capsys, "synth", "--config", workspace / "cfg.json", "--out", workspace / "sess")
    assert code == 2 and "--force" in json.loads(err)["message"]


def test_config_error_is_machine_readable(capsys, tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"train": {"batch_size": -4}}))
    code, _, err = run(capsys, "info", "--config", tmp_path / "bad.json")
    payload = json.loads(err)
    assert code == 2
    assert payload["error"] == "ConfigurationError" and payload["path"] == "/train/batch_size"


def test_corrupt_checkpoint_names_tensor(capsys, workspace, tmp_path):
    import shutil

    shutil.copytree(workspace / "tr" / "checkpoint", tmp_path / "ck")
    f = tmp_path / "ck" / "params" / "conv.bias.ctsr"
    f.write_bytes(f.read_bytes()[:-2])
    code, _, err = run(capsys, "info", "--checkpoint", tmp_path / "ck")
    assert code == 2 and "conv.bias" in json.loads(err)["message"]
