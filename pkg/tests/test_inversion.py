import warnings

import numpy as np
import pytest

from ecog2speech.dsp import FilterBankSpec, Spectrogram, Waveform, analyze, subsample_bands
from ecog2speech.errors import ConfigurationError
from ecog2speech.inversion import SilentTargetWarning, SubbandFrame, invert_spectrogram, upsample_target
from ecog2speech.synth import synth_vowel

FS = 24000


@pytest.fixture(scope="module")
def short_vowel_spec():
    w = synth_vowel(duration=0.3, seed=3)
    return subsample_bands(analyze(w))


def test_frame_reconstructs_signals_inside_support():
    frame = SubbandFrame(FilterBankSpec(), 4800, FS)
    x = frame.project_signal(np.random.default_rng(0).standard_normal(4800))
    back = frame.synthesis(frame.analysis(x))
    assert np.max(np.abs(back - x)) < 1e-9 * np.max(np.abs(x)) + 1e-12


def test_frame_analysis_matches_full_rate_envelope():
    # reduced-rate subband magnitudes equal the full-length analytic envelope
    n = 4800
    spec = FilterBankSpec()
    x = np.random.default_rng(1).standard_normal(n)
    frame = SubbandFrame(spec, n, FS)
    band = 70
    X = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(n, 1 / FS)
    full = np.zeros(n, complex)
    full[:X.size] = 2 * spec.gain(freqs, band) * X
    env = np.abs(np.fft.ifft(full))
    sub = np.abs(frame.analysis(x)[band])
    t_full = np.arange(n) / FS
    assert np.allclose(sub, np.interp(frame.sample_times(band), t_full, env), atol=1e-6 * env.max())


def test_upsample_target_places_groups_at_their_centers():
    spec = FilterBankSpec()
    vals = np.zeros((32, 2))
    vals[5] = 1.0
    up = upsample_target(Spectrogram(vals, np.arange(1, 33)), spec, 2, 100)
    # group 5 covers bands 20..23, centered at 21.5
    assert up[21, 0] == pytest.approx(0.875)
    assert up[22, 0] == pytest.approx(0.875)
    assert up[19, 0] == pytest.approx(0.375)
    assert up[25, 0] == pytest.approx(0.125)
    assert up[:18].max() == 0 and up[26:].max() == 0


def test_all_zero_target_returns_silence_with_warning():
    target = Spectrogram(np.zeros((32, 20)), np.arange(1, 33))
    with pytest.warns(SilentTargetWarning):
        w = invert_spectrogram(target, iterations=3)
    assert w.samples.size == 20 * FS // 100
    assert np.sqrt(np.mean(w.samples ** 2)) < 1e-6


def test_negative_values_are_clipped():
    target = Spectrogram(-np.ones((32, 10)), np.arange(1, 33))
    with pytest.warns(SilentTargetWarning):
        invert_spectrogram(target, iterations=1)


def test_iterations_must_be_positive(short_vowel_spec):
    with pytest.raises(ConfigurationError):
        invert_spectrogram(short_vowel_spec, iterations=0)


def test_error_is_monotone_and_output_deterministic(short_vowel_spec):
    a, errs = invert_spectrogram(short_vowel_spec, iterations=12, seed=4, return_errors=True)
    b = invert_spectrogram(short_vowel_spec, iterations=12, seed=4)
    assert len(errs) == 13
    steps = np.diff(errs)
    assert np.all(steps <= 1e-4 * np.asarray(errs[:-1]))
    assert errs[-1] < errs[0]
    assert np.array_equal(a.samples, b.samples)


def test_different_seeds_differ(short_vowel_spec):
    a = invert_spectrogram(short_vowel_spec, iterations=2, seed=0)
    b = invert_spectrogram(short_vowel_spec, iterations=2, seed=1)
    assert not np.array_equal(a.samples, b.samples)
    assert a.sample_rate == FS
