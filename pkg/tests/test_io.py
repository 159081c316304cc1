import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from ecog2speech import ctsr
from ecog2speech.config import DEFAULTS, load_config, validate, with_defaults
from ecog2speech.dsp import Waveform
from ecog2speech.errors import ConfigurationError, FormatError
from ecog2speech.wavio import read_wav, write_wav


# -- CTSR -------------------------------------------------------------------------

def test_ctsr_header_bytes():
    buf = ctsr.encode(np.arange(6, dtype=np.float32).reshape(2, 3))
    assert buf[:7] == b"CTSR\x01\x01\x02"
    assert struct.unpack("<2Q", buf[7:23]) == (2, 3)
    assert np.frombuffer(buf[23:], "<f4").tolist() == [0, 1, 2, 3, 4, 5]


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5),
                  elements=st.floats(width=32, allow_nan=False)))
def test_ctsr_round_trip_is_bit_exact(a):
    b = ctsr.decode(ctsr.encode(a))
    assert b.shape == a.shape and b.dtype == np.float32
    assert a.tobytes() == b.tobytes()


def test_ctsr_file_and_sidecar(tmp_path):
    a = np.random.default_rng(0).standard_normal((3, 4)).astype(np.float32)
    ctsr.save(tmp_path / "x.ctsr", a, {"frame_rate": 100})
    assert np.array_equal(ctsr.load(tmp_path / "x.ctsr"), a)
    assert ctsr.load_sidecar(tmp_path / "x.ctsr") == {"frame_rate": 100}
    assert ctsr.load_sidecar(tmp_path / "missing.ctsr") == {}


@pytest.mark.parametrize("mutate, offset", [
    (lambda b: b"XXXX" + b[4:], 0),
    (lambda b: b[:4] + b"\x02" + b[5:], 4),
    (lambda b: b[:5] + b"\x07" + b[6:], 5),
    (lambda b: b[:10], 10),
    (lambda b: b[:-1], 23),
    (lambda b: b + b"\x00", 23),
    (lambda b: b[:3], 3),
])
def test_ctsr_corruption_reports_offset(mutate, offset):
    buf = ctsr.encode(np.zeros((2, 3), np.float32))
    with pytest.raises(FormatError) as ei:
        ctsr.decode(mutate(buf))
    assert ei.value.offset == offset


# -- WAV --------------------------------------------------------------------------

def test_wav_round_trip_within_quantization(tmp_path):
    x = np.sin(np.linspace(0, 60, 4800)) * 0.9
    write_wav(tmp_path / "a.wav", Waveform(x, 24000))
    w = read_wav(tmp_path / "a.wav")
    assert w.sample_rate == 24000 and w.samples.size == 4800
    assert np.max(np.abs(w.samples - x)) <= 0.5 / 32767 + 1e-7


def test_wav_clips_out_of_range(tmp_path):
    write_wav(tmp_path / "a.wav", Waveform(np.array([2.0, -3.0, 0.0]), 8000))
    raw = (tmp_path / "a.wav").read_bytes()
    assert np.frombuffer(raw[-6:], "<i2").tolist() == [32767, -32768, 0]


def _wav_bytes(fmt_code=1, channels=1, bits=16, data=b"\x00\x00" * 4, rate=24000):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_code, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(data)) + data
    return b"RIFF" + struct.pack("<I", len(body)) + body


@pytest.mark.parametrize("kwargs, needle", [
    (dict(fmt_code=3), "PCM"),
    (dict(channels=2), "channel"),
    (dict(bits=8), "16"),
])
def test_wav_rejects_unsupported_formats(tmp_path, kwargs, needle):
    p = tmp_path / "a.wav"
    p.write_bytes(_wav_bytes(**kwargs))
    with pytest.raises(FormatError, match=needle):
        read_wav(p)


def test_wav_rejects_truncated_and_foreign(tmp_path):
    p = tmp_path / "a.wav"
    p.write_bytes(_wav_bytes()[:-3])
    with pytest.raises(FormatError):
        read_wav(p)
    p.write_bytes(b"OggS" + b"\x00" * 40)
    with pytest.raises(FormatError):
        read_wav(p)


def test_wav_hand_built_file_reads(tmp_path):
    p = tmp_path / "a.wav"
    p.write_bytes(_wav_bytes(data=struct.pack("<4h", 0, 16384, -32768, 32767), rate=8000))
    w = read_wav(p)
    assert w.sample_rate == 8000
    np.testing.assert_allclose(w.samples, [0, 16384 / 32767, -32768 / 32767, 1.0], atol=1e-4)


# -- experiment config ------------------------------------------------------------

def test_config_defaults_fill_in(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"model": {"variant": "linear"}, "folds": {"k": 4}}))
    cfg = load_config(p)
    assert cfg["model"]["variant"] == "linear"
    assert cfg["folds"]["k"] == 4
    assert cfg["dsp"] == DEFAULTS["dsp"]


@pytest.mark.parametrize("doc, pointer", [
    ({"train": {"lr": 0}}, "/train/lr"),
    ({"model": {"variant": "lstm"}}, "/model/variant"),
    ({"dsp": {"filterbank": {"num_bands": "many"}}}, "/dsp/filterbank/num_bands"),
    ({"folds": {"k": 1}}, "/folds/k"),
    ({"train": {"batch_size": 0}}, "/train/batch_size"),
])
def test_config_errors_carry_json_pointer(doc, pointer):
    with pytest.raises(ConfigurationError) as ei:
        validate(doc)
    assert ei.value.pointer == pointer


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigurationError) as ei:
        with_defaults({"model": {"variant": "linear", "depth": 3}})
    assert ei.value.pointer == "/model"


def test_config_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigurationError, match="line 1"):
        load_config(p)
