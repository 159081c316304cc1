import json

import numpy as np
import pytest

from test_models import small

from ecog2speech import ctsr
from ecog2speech.data import NormStats
from ecog2speech.errors import ConfigurationError, ShapeError
from ecog2speech.models import ModelConfig, build_model
from ecog2speech.probe import (IMPULSE_START, IMPULSE_STOP, export_pgm, impulse_response,
                               make_impulse, montage, probe_all, read_pgm, sonify, to_gray,
                               write_probe)
from ecog2speech.wavio import read_wav


def test_impulse_layout():
    x = make_impulse(5, 2.5)
    assert x.shape == (64, 100)
    assert np.all(x[5, 50:60] == 2.5)
    assert np.count_nonzero(x) == 10
    with pytest.raises(ConfigurationError):
        make_impulse(64, 1.0)


def _linear_with_kernel(seed=0, taps=9):
    m = build_model(small("linear", linear_filter=taps), 0)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(m.conv.weight.shape).astype(np.float32)
    m.conv.weight.data[...] = w
    m.conv.bias.data[...] = rng.standard_normal(32).astype(np.float32)
    return m, w


def test_linear_response_is_boxcar_convolved_kernel():
    m, w = _linear_with_kernel()
    r = impulse_response(m, 3, 1.5)
    k = w.shape[2]
    box = np.zeros(100)
    box[IMPULSE_START:IMPULSE_STOP] = 1.5
    # Causal conv by hand: out[b, t] = sum_j w[b, 3, k-1-j] * box[t - j].
    want = np.zeros((32, 100))
    for t in range(100):
        for j in range(k):
            if t - j >= 0:
                want[:, t] += w[:, 3, k - 1 - j] * box[t - j]
    np.testing.assert_allclose(r, want, atol=1e-4)
    assert np.all(r[:, :IMPULSE_START] == 0)
    assert np.all(r[:, IMPULSE_STOP + k - 1:] == 0)


def test_bias_cancels_and_stats_rescale():
    m, _ = _linear_with_kernel(1)
    stats = NormStats(np.zeros(64, np.float32), np.ones(64, np.float32),
                      np.full(32, 7.0, np.float32), np.arange(1, 33, dtype=np.float32))
    raw = impulse_response(m, 0, 1.0)
    scaled = impulse_response(m, 0, 1.0, stats)
    np.testing.assert_allclose(scaled, raw * np.arange(1, 33)[:, None], rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("variant", ["resnet", "wavenet"])
def test_probe_all_matches_single_probes_and_is_causal(variant):
    m = build_model(small(variant), 2)
    irmap = probe_all(m, 1.0)
    assert irmap.responses.shape == (64, 32, 100)
    for e in (0, 17, 63):
        np.testing.assert_allclose(irmap.responses[e], impulse_response(m, e, 1.0), atol=1e-5)
    # Eval-mode BN is per-frame affine, so nothing can move before the impulse.
    assert np.all(irmap.responses[:, :, :IMPULSE_START] == 0)


def test_probe_is_deterministic_and_leaves_training_mode():
    m = build_model(small("wavenet"), 3)
    m.train()
    a = probe_all(m, 2.0).responses
    assert m.training
    b = probe_all(m, 2.0).responses
    assert np.array_equal(a, b)


# -- images -----------------------------------------------------------------------

def test_gray_scale_orientation_and_constant():
    v = np.array([[0.0, 1.0], [2.0, 4.0]])
    g = to_gray(v)
    assert g.tolist() == [[128, 255], [0, 64]]  # row 0 holds the top band
    assert np.all(to_gray(np.full((3, 4), 9.0)) == 128)
    with pytest.raises(ShapeError):
        to_gray(np.zeros(4))
    with pytest.raises(ConfigurationError):
        to_gray(np.array([[np.nan, 1.0]]))


def test_pgm_round_trip(tmp_path):
    v = np.random.default_rng(0).standard_normal((32, 100))
    export_pgm(v, tmp_path / "a.pgm")
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n100 32\n255\n")
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), to_gray(v))


def test_montage_geometry_and_margins():
    rng = np.random.default_rng(0)
    r = rng.standard_normal((64, 32, 100))
    img = montage(r, margin=2)
    assert img.shape == (8 * 34, 8 * 102)
    assert np.array_equal(img[34:66, 102:202], to_gray(r[9]))
    assert np.all(img[32:34, :] == 0) and np.all(img[:, 100:102] == 0)
    with pytest.raises(ShapeError):
        montage(np.zeros((65, 2, 2)))


# -- audio and export -------------------------------------------------------------

def test_sonify_clips_negative_values():
    rng = np.random.default_rng(0)
    r = rng.standard_normal((32, 30)).astype(np.float32)
    a = sonify(r, iterations=2, seed=1)
    b = sonify(np.clip(r, 0, None), iterations=2, seed=1)
    assert np.array_equal(a.samples, b.samples)
    assert a.samples.size == 30 * 240


def test_write_probe_layout(tmp_path):
    m = build_model(small("linear"), 0)
    m.conv.weight.data[:, 0] = 0.0  # electrode 0 drives nothing
    m.conv.weight.data[:, 1:] = 0.01
    irmap = probe_all(m, 1.0, source="ck")
    centers = np.geomspace(200, 6000, 32)
    manifest = write_probe(tmp_path, irmap, centers, iterations=2)
    files = sorted(p.name for p in tmp_path.iterdir())
    assert len(files) == 64 * 4 + 2
    assert "montage.pgm" in files and "manifest.json" in files
    assert manifest == json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["silent_electrodes"] == [0]
    assert manifest["impulse_frames"] == [50, 59]
    np.testing.assert_array_equal(ctsr.load(tmp_path / "elec_05.ctsr"), irmap.responses[5])
    assert ctsr.load_sidecar(tmp_path / "elec_05.ctsr")["band_centers"][0] == pytest.approx(200)
    assert read_wav(tmp_path / "elec_05.wav").sample_rate == 24000
