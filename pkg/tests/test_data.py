import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecog2speech.data import (NormStats, PairedRecording, ZeroVarianceWarning, align,
                              compute_norm_stats, delay, denormalize_ecog, denormalize_spec,
                              fold_windows, kfold_split, lag_samples, load_session, normalize,
                              save_session, segment)
from ecog2speech.dsp import EcogEnvelope, Spectrogram, Waveform
from ecog2speech.errors import ConfigurationError, FormatError, ShapeError
from ecog2speech.synth import Annotation, synth_raw_ecog

CENTERS = np.geomspace(200, 6000, 32)


def make_recording(words=50, reps=3, token=40, gap=100, seed=0):
    """Random streams with a word/repetition layout like a real session."""
    rng = np.random.default_rng(seed)
    notes, pos = [], gap // 2
    for r in range(reps):
        for w in rng.permutation(words):
            notes.append(Annotation(int(w), r, pos, pos + token))
            pos += token + gap
    n = pos + gap // 2
    ecog = EcogEnvelope(rng.random((64, n)).astype(np.float32))
    spec = Spectrogram(rng.random((32, n)).astype(np.float32), CENTERS)
    return PairedRecording(ecog, spec, notes)


@pytest.fixture(scope="module")
def rec():
    return make_recording()


# -- alignment ----------------------------------------------------------------------

def test_lag_arithmetic():
    assert lag_samples(24000) == 4032
    assert lag_samples(100) == 17
    assert lag_samples(24000, 0.0) == 0


def test_delay_shifts_and_zero_delay_is_copy():
    x = np.arange(6.0)
    assert np.array_equal(delay(x, 2), [0, 0, 0, 1, 2, 3])
    y = delay(x, 0)
    assert np.array_equal(y, x) and y is not x


def test_align_zero_lag_keeps_streams_and_equalizes_frames():
    speech = Waveform(np.zeros(24000), 24000)
    t = np.arange(100) / 100.0
    env = np.vstack([1 + 0.3 * np.sin(2 * np.pi * t)] * 2)
    raw = synth_raw_ecog(env)
    rec = align(speech, raw, lag_s=0.0)
    assert rec.ecog.num_frames == rec.spec.num_frames == 100
    assert np.all(rec.spec.values == 0)  # silence in, silence out
    assert rec.spec.num_bands == 32


def test_align_lag_moves_annotations():
    speech = Waveform(np.zeros(48000), 24000)
    raw = np.zeros((2, 6102))
    notes = [Annotation(0, 0, 2400, 12000)]
    rec = align(speech, raw, annotations=notes)
    assert rec.annotations[0].onset == 10 + 17
    assert rec.annotations[0].offset == 50 + 17


def test_align_rejects_lag_longer_than_recording():
    with pytest.raises(ConfigurationError):
        align(Waveform(np.zeros(1000), 24000), np.zeros((1, 500)))


def test_paired_recording_validation():
    e = EcogEnvelope(np.zeros((64, 10)))
    s = Spectrogram(np.zeros((32, 10)), CENTERS)
    with pytest.raises(ShapeError):
        PairedRecording(e, Spectrogram(np.zeros((32, 9)), CENTERS))
    with pytest.raises(ShapeError):
        PairedRecording(e, s, [Annotation(0, 0, 5, 11)])
    with pytest.raises(ShapeError):
        PairedRecording(e, s, [Annotation(0, 0, 1, 5), Annotation(1, 0, 4, 8)])


# -- normalization -----------------------------------------------------------------

def test_normalize_round_trip(rec):
    stats = compute_norm_stats(rec)
    norm = normalize(rec, stats)
    assert np.max(np.abs(denormalize_spec(norm.spec.values, stats) - rec.spec.values)) < 1e-5
    assert np.max(np.abs(denormalize_ecog(norm.ecog.values, stats) - rec.ecog.values)) < 1e-5


def test_normalized_training_frames_are_standard(rec):
    frames = np.arange(0, rec.num_frames, 3)
    norm = normalize(rec, compute_norm_stats(rec, frames))
    for arr in (norm.ecog.values, norm.spec.values):
        sub = arr[:, frames].astype(np.float64)
        assert np.abs(sub.mean(axis=1)).max() < 1e-5
        assert np.abs(sub.var(axis=1) - 1).max() < 1e-3


def test_constant_channel_normalizes_to_zero_with_warning():
    e = np.random.default_rng(0).random((64, 30)).astype(np.float32)
    e[4] = 2.0
    r = PairedRecording(EcogEnvelope(e), Spectrogram(np.ones((32, 30)), CENTERS))
    with pytest.warns(ZeroVarianceWarning):
        stats = compute_norm_stats(r)
    norm = normalize(r, stats)
    assert np.all(norm.ecog.values[4] == 0)
    assert np.all(norm.spec.values == 0)
    assert np.all(np.isfinite(norm.ecog.values))


def test_norm_stats_array_round_trip(rec):
    stats = compute_norm_stats(rec)
    back = NormStats.from_array(stats.to_array())
    assert np.array_equal(back.ecog_std, stats.ecog_std)
    assert np.array_equal(back.spec_mean, stats.spec_mean)
    with pytest.raises(FormatError):
        NormStats.from_array(np.zeros((3, 96)))


# -- segmentation ------------------------------------------------------------------

def flat_recording(n):
    return PairedRecording(EcogEnvelope(np.zeros((64, n))), Spectrogram(np.zeros((32, n)), CENTERS))


def test_segment_counts():
    assert len(segment(flat_recording(100))) == 1
    segs = segment(flat_recording(30000))
    assert len(segs) == 29901
    assert segs.offsets[0] == 0 and segs.offsets[1] == 1


def test_segment_rejects_short_recording():
    with pytest.raises(ShapeError):
        segment(flat_recording(99))


@settings(max_examples=25, deadline=None)
@given(st.integers(100, 400), st.data())
def test_windows_reassemble_source(n, data):
    rng = np.random.default_rng(n)
    r = PairedRecording(EcogEnvelope(rng.random((64, n))), Spectrogram(rng.random((32, n)), CENTERS))
    segs = segment(r)
    idx = data.draw(st.lists(st.integers(0, len(segs) - 1), min_size=1, max_size=5))
    x, y = segs.batch(idx)
    for row, i in enumerate(idx):
        j = data.draw(st.integers(0, 99))
        assert np.array_equal(x[row, :, j], r.ecog.values[:, i + j])
        assert np.array_equal(y[row, :, j], r.spec.values[:, i + j])
        e, s = segs[i]
        assert np.array_equal(e, x[row]) and np.array_equal(s, y[row])


# -- folds -------------------------------------------------------------------------

def test_fold_plan_partitions_utterances(rec):
    plan = kfold_split(rec, 3)
    assert plan.k == 3
    every = []
    for test in plan.test_sets:
        assert len(test) == 50
        assert sorted(w for w, _ in test) == list(range(50))
        every.extend(test)
    assert len(every) == len(set(every)) == 150


def test_fold_plan_requires_k_repetitions(rec):
    with pytest.raises(ConfigurationError):
        kfold_split(rec, 4)
    with pytest.raises(ConfigurationError):
        kfold_split(flat_recording(200), 3)


@pytest.mark.parametrize("fold", [0, 1, 2])
def test_no_training_window_touches_test_frames(rec, fold):
    plan = kfold_split(rec, 3)
    win = fold_windows(rec, plan, fold)
    test_frames = np.zeros(rec.num_frames, bool)
    for a in win.test_utterances:
        test_frames[a.onset:a.offset] = True
    # exhaustive: every frame of every training and validation window
    for offs in (win.train, win.val):
        frames = (np.asarray(offs)[:, None] + np.arange(100)).ravel()
        assert not test_frames[frames].any()
    assert len(win.train) > 0 and len(win.val) > 0


def test_validation_frames_unseen_by_training(rec):
    win = fold_windows(rec, kfold_split(rec, 3), 0)
    train = set((win.train[:, None] + np.arange(100)).ravel().tolist())
    val = set((win.val[:, None] + np.arange(100)).ravel().tolist())
    assert not train & val
    assert 0.05 < len(win.val) / (len(win.val) + len(win.train)) < 0.2


def test_test_windows_center_their_utterances(rec):
    win = fold_windows(rec, kfold_split(rec, 3), 1)
    assert len(win.test) == 50
    for o, a in zip(win.test, win.test_utterances):
        assert o <= a.onset and a.offset <= o + 100
        mid = (a.onset + a.offset) / 2
        assert abs((o + 50) - mid) <= 1
    assert set(win.test) <= set(win.dense_test)


def test_hop_decimates_training_windows(rec):
    plan = kfold_split(rec, 3)
    full = fold_windows(rec, plan, 0)
    thin = fold_windows(rec, plan, 0, hop=10)
    assert set(thin.train) <= set(full.train)
    assert np.all(thin.train % 10 == 0)
    assert np.array_equal(thin.val, full.val)


def test_fold_index_checked(rec):
    with pytest.raises(ConfigurationError):
        fold_windows(rec, kfold_split(rec, 3), 3)


# -- disk --------------------------------------------------------------------------

def test_session_round_trip(tmp_path, rec):
    save_session(tmp_path / "s", rec, {"seed": 1})
    back, meta = load_session(tmp_path / "s")
    assert meta == {"seed": 1}
    assert np.array_equal(back.ecog.values, rec.ecog.values)
    assert np.array_equal(back.spec.values, rec.spec.values)
    assert np.allclose(back.spec.band_centers, CENTERS)
    assert back.annotations == rec.annotations


def test_session_missing_file(tmp_path, rec):
    save_session(tmp_path / "s", rec, {})
    (tmp_path / "s" / "spec.ctsr").unlink()
    with pytest.raises(FormatError, match="spec.ctsr"):
        load_session(tmp_path / "s")
