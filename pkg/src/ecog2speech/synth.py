"""Synthetic word stimuli and ground-truth encoders.

Patient recordings are not available, so every verifiable experiment runs
on sessions built here: formant-synthesised word tokens, their filterbank
spectrogram, and pseudo-ECoG envelopes produced by a known encoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, lfilter, sosfilt

from .dsp import NUM_ELECTRODES, SPEECH_RATE, EcogEnvelope, Spectrogram, Waveform
from .errors import ConfigurationError, ShapeError

FORMANT_RANGES = ((250.0, 900.0), (800.0, 2500.0), (1800.0, 3500.0))
FORMANT_BANDWIDTHS = (80.0, 110.0, 160.0)
FORMANT_AMPLITUDES = (1.0, 0.6, 0.35)
FRICATIVE_CENTERS = (3000.0, 6500.0)


def _resonator(freq, bw, fs):
    r = np.exp(-np.pi * bw / fs)
    theta = 2.0 * np.pi * freq / fs
    a = np.array([1.0, -2.0 * r * np.cos(theta), r * r])
    # unity gain at the resonance peak
    b = np.array([abs(np.polyval(a[::-1], np.exp(-1j * theta)))])
    return b, a


def formant_token(tracks, f0, duration: float, fs: int = SPEECH_RATE, rng=None,
                  bandwidths=FORMANT_BANDWIDTHS, amplitudes=FORMANT_AMPLITUDES,
                  aspiration: float = 0.01, ramp: float = 0.03) -> np.ndarray:
    """Pitch-pulsed source through a parallel bank of time-varying resonators.

    ``tracks`` is ``(n_formants, n_points)``: formant centers interpolated
    linearly over the token; ``f0`` is a scalar or ``(start, end)`` pair.
    Coefficients are updated every 5 ms with filter state carried over.
    Output is scaled to an RMS of 0.1.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    n = int(round(duration * fs))
    tracks = np.atleast_2d(np.asarray(tracks, dtype=np.float64))
    f0s = np.asarray(f0, dtype=np.float64) * np.ones(2)
    pitch = np.linspace(f0s[0], f0s[1], n)
    phase = np.cumsum(pitch / fs)
    source = np.zeros(n)
    source[1:][np.diff(np.floor(phase)) > 0] = 1.0
    source += aspiration * rng.standard_normal(n)

    block = max(1, int(0.005 * fs))
    pos = np.linspace(0.0, 1.0, tracks.shape[1])
    y = np.zeros(n)
    for k in range(tracks.shape[0]):
        out = np.empty(n)
        zi = np.zeros(2)
        for s in range(0, n, block):
            u = min(1.0, (s + block / 2) / n)
            fc = np.interp(u, pos, tracks[k])
            b, a = _resonator(fc, bandwidths[k % len(bandwidths)], fs)
            out[s:s + block], zi = lfilter(b, a, source[s:s + block], zi=zi)
        y += amplitudes[k % len(amplitudes)] * out
    env = np.ones(n)
    r = min(int(ramp * fs), n // 2)
    if r > 0:
        w = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
        env[:r] = w
        env[n - r:] = w[::-1]
    y = y * env
    rms = np.sqrt(np.mean(y * y))
    return (0.1 * y / rms if rms > 0 else y).astype(np.float32)


def fricative(n: int, center: float, bandwidth: float, rms: float, fs: int = SPEECH_RATE,
              rng=None) -> np.ndarray:
    """Hann-windowed band-passed noise burst of ``n`` samples scaled to ``rms``."""
    rng = rng if rng is not None else np.random.default_rng(0)
    lo, hi = center - bandwidth / 2, min(center + bandwidth / 2, 0.45 * fs)
    sos = butter(4, [lo, hi], btype="bandpass", fs=fs, output="sos")
    y = sosfilt(sos, rng.standard_normal(n)) * np.hanning(n)
    return rms * y / np.sqrt(np.mean(y * y))


def word_token(word_id: int, seed: int, duration: float = 0.4,
               fs: int = SPEECH_RATE) -> np.ndarray:
    """Voiced formant token plus one fricative burst at its onset or coda.

    The burst gives the bands above the third formant structure of their
    own; without it they all follow the same resonator tail.
    """
    tracks, f0 = word_tracks(word_id, seed)
    x = formant_token(tracks, f0, duration, fs, np.random.default_rng([seed, word_id, 1]))
    rng = np.random.default_rng([seed, word_id, 2])
    center = rng.uniform(*FRICATIVE_CENTERS)
    n = int(rng.uniform(0.06, 0.12) * fs)
    burst = fricative(n, center, rng.uniform(0.15, 0.3) * center, rng.uniform(0.05, 0.1), fs, rng)
    start = 0 if rng.random() < 0.5 else x.size - n
    x[start:start + n] += burst.astype(np.float32)
    return x


def synth_vowel(duration: float = 1.0, formants=(700.0, 1220.0, 2600.0), f0=(130.0, 110.0),
                fs: int = SPEECH_RATE, seed: int = 0, ramp: float = 0.15) -> Waveform:
    """A steady vowel with slow onset and offset ramps."""
    tracks = np.array(formants, dtype=np.float64)[:, None].repeat(2, axis=1)
    x = formant_token(tracks, f0, duration, fs, np.random.default_rng(seed), ramp=ramp)
    return Waveform(x, fs)


@dataclass(frozen=True)
class Annotation:
    word_id: int
    repetition: int
    onset: int
    offset: int  # exclusive


@dataclass
class Stimuli:
    waveform: Waveform
    annotations: list  # Annotation, onset/offset in samples


def word_tracks(word_id: int, seed: int, points: int = 3) -> tuple[np.ndarray, tuple]:
    """Per-word formant trajectory and pitch contour, fixed by (seed, word_id)."""
    rng = np.random.default_rng([seed, word_id])
    tracks = np.stack([rng.uniform(lo, hi, size=points) for lo, hi in FORMANT_RANGES])
    tracks.sort(axis=0)
    f0 = (rng.uniform(150, 230), rng.uniform(110, 170))
    return tracks, f0


def synth_stimuli(num_words: int = 50, reps: int = 3, seed: int = 0, fs: int = SPEECH_RATE,
                  token_s: float = 0.4, gap_s: float = 1.0) -> Stimuli:
    """Word tokens separated by silence, each repetition block in its own random order.

    Every slot is ``gap_s / 2`` silence, one token, ``gap_s / 2`` silence,
    so consecutive tokens are ``gap_s`` apart.
    """
    if num_words < 1 or reps < 1:
        raise ConfigurationError("need at least one word and one repetition")
    tokens = []
    for w in range(num_words):
        tokens.append(word_token(w, seed, token_s, fs))
    token_n = tokens[0].size
    half_gap = int(round(gap_s * fs / 2))
    slot = 2 * half_gap + token_n
    order_rng = np.random.default_rng([seed, 7919])
    x = np.zeros(num_words * reps * slot, dtype=np.float32)
    notes = []
    for r in range(reps):
        for i, w in enumerate(order_rng.permutation(num_words)):
            start = (r * num_words + i) * slot + half_gap
            x[start:start + token_n] = tokens[w]
            notes.append(Annotation(int(w), r, start, start + token_n))
    return Stimuli(Waveform(x, fs), notes)


@dataclass
class TeacherSpec:
    """Known spectrogram -> pseudo-ECoG encoder.

    ``kernel`` is ``electrodes x bands x taps``; tap ``tau`` weights the
    spectrogram ``tau`` frames in the past. ``noise_std`` is relative to the
    per-electrode standard deviation of the noiseless output.
    """

    kernel: np.ndarray
    mode: str = "linear"
    gain: float = 1.0
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        if self.kernel.ndim != 3:
            raise ShapeError(f"kernel must be electrodes x bands x taps, got {self.kernel.shape}")
        if self.mode not in ("linear", "gated-nonlinear"):
            raise ConfigurationError(f"unknown teacher mode {self.mode!r}")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be nonnegative")

    @property
    def taps(self) -> int:
        return self.kernel.shape[2]

    def describe(self) -> dict:
        return {"mode": self.mode, "gain": self.gain, "noise_std": self.noise_std, "seed": self.seed,
                "kernel_shape": list(self.kernel.shape)}


def snr_to_noise_std(snr_db: float) -> float:
    return float(10.0 ** (-snr_db / 20.0))


def diagonal_teacher(num_bands: int = 32, electrodes: int = NUM_ELECTRODES, taps: int = 1,
                     **kw) -> TeacherSpec:
    """Electrode ``e`` copies band ``e % num_bands`` at lag zero."""
    k = np.zeros((electrodes, num_bands, taps))
    for e in range(electrodes):
        k[e, e % num_bands, 0] = 1.0
    return TeacherSpec(k, **kw)


def strf_teacher(num_bands: int = 32, electrodes: int = NUM_ELECTRODES, taps: int = 8,
                 seed: int = 0, spread: float = 1.5, inhibition: float = 0.6,
                 decay=(1.0, 3.0), **kw) -> TeacherSpec:
    """Random spectro-temporal receptive fields.

    Each electrode has an excitatory Gaussian tuning around a random best
    band, a weaker inhibitory lobe around another band, and a temporal
    profile peaking at lag zero with a time constant drawn from ``decay``
    (frames), truncated at ``taps``.
    """
    rng = np.random.default_rng([seed, 104729])
    bands = np.arange(num_bands)
    lags = np.arange(taps)
    k = np.zeros((electrodes, num_bands, taps))
    for e in range(electrodes):
        best = rng.uniform(0, num_bands - 1)
        other = rng.uniform(0, num_bands - 1)
        tune = np.exp(-0.5 * ((bands - best) / spread) ** 2)
        tune -= inhibition * rng.uniform(0.5, 1.0) * np.exp(-0.5 * ((bands - other) / (2 * spread)) ** 2)
        tau = rng.uniform(*decay)
        temporal = np.exp(-lags / tau)
        k[e] = np.outer(tune, temporal) / temporal.sum()
    return TeacherSpec(k, seed=seed, **kw)


def teacher_encode(spec, teacher: TeacherSpec) -> EcogEnvelope:
    """Apply the encoder to a ``bands x frames`` spectrogram (array or Spectrogram)."""
    values = spec.values if isinstance(spec, Spectrogram) else np.asarray(spec)
    frame_rate = spec.frame_rate if isinstance(spec, Spectrogram) else 100.0
    s = np.asarray(values, dtype=np.float64)
    e, b, taps = teacher.kernel.shape
    if s.shape[0] != b:
        raise ShapeError(f"spectrogram has {s.shape[0]} bands, teacher expects {b}")
    if taps > s.shape[1]:
        raise ConfigurationError(f"teacher needs {taps} frames of history, recording has {s.shape[1]}")
    y = np.zeros((e, s.shape[1]))
    for tau in range(taps):
        shifted = np.zeros_like(s)
        shifted[:, tau:] = s[:, :s.shape[1] - tau]
        y += teacher.kernel[:, :, tau] @ shifted
    if teacher.mode == "gated-nonlinear":
        y = y / (1.0 + np.exp(-teacher.gain * y))
    if teacher.noise_std > 0:
        rng = np.random.default_rng([teacher.seed, 15485863])
        scale = y.std(axis=1, keepdims=True)
        y = y + teacher.noise_std * scale * rng.standard_normal(y.shape)
    return EcogEnvelope(y.astype(np.float32), frame_rate)


def synth_raw_ecog(envelope, sample_rate: int = 3051, frame_rate: float = 100.0,
                   carrier: float = 110.0, seed: int = 0) -> np.ndarray:
    """Raw traces whose 70-150 Hz envelope follows ``envelope`` (electrodes x frames).

    Each electrode is a ``carrier`` Hz sinusoid with a random phase, amplitude
    modulated by its envelope interpolated to ``sample_rate``. Negative
    envelope values are clipped to zero.
    """
    env = np.clip(np.atleast_2d(np.asarray(envelope, dtype=np.float64)), 0.0, None)
    n = int(np.floor(env.shape[1] * sample_rate / frame_rate))
    t = np.arange(n) / sample_rate
    frame_t = np.arange(env.shape[1]) / frame_rate
    phases = np.random.default_rng([seed, 31337]).uniform(0, 2 * np.pi, env.shape[0])
    out = np.empty((env.shape[0], n), dtype=np.float32)
    for e in range(env.shape[0]):
        out[e] = np.interp(t, frame_t, env[e]) * np.sin(2 * np.pi * carrier * t + phases[e])
    return out
