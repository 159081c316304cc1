"""Audio and neural-signal front end.

Speech goes through a bank of log-spaced Gaussian band-pass filters, each
band's analytic-signal magnitude is low-passed and decimated to the frame
rate. Raw ECoG goes through a 70-150 Hz band-pass, the same envelope
extraction and a rational resampler down to the frame rate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.fft as sfft
from scipy.signal import resample_poly

from .errors import ConfigurationError, ShapeError

log = logging.getLogger(__name__)

SPEECH_RATE = 24000
ECOG_RATE = 3051
FRAME_RATE = 100
NUM_ELECTRODES = 64

# Gaussian tails below this gain are treated as zero when picking FFT bins.
_GAIN_FLOOR = 1e-8


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if self.sample_rate <= 0:
            raise ConfigurationError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class Spectrogram:
    """``bands x frames`` magnitudes with band centers in Hz."""

    values: np.ndarray
    band_centers: np.ndarray
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.band_centers = np.asarray(self.band_centers, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.band_centers.size:
            raise ShapeError(
                f"values {self.values.shape} do not match {self.band_centers.size} band centers")

    @property
    def num_bands(self) -> int:
        return self.values.shape[0]

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]

    def sidecar(self) -> dict:
        return {"frame_rate": float(self.frame_rate), "band_centers": self.band_centers.tolist()}


@dataclass
class EcogEnvelope:
    """``electrodes x frames`` high-gamma envelope."""

    values: np.ndarray
    frame_rate: float = FRAME_RATE

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ShapeError(f"envelope must be electrodes x frames, got {self.values.shape}")

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]

    def sidecar(self) -> dict:
        return {"frame_rate": float(self.frame_rate), "electrodes": int(self.values.shape[0])}


@dataclass
class FilterBankSpec:
    num_bands: int = 128
    f_low: float = 180.0
    f_high: float = 7000.0
    bandwidth: float = 1.0 / 12.0  # octaves, full width at -3 dB
    center_freqs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.num_bands < 2 or not 0 < self.f_low < self.f_high or self.bandwidth <= 0:
            raise ConfigurationError(f"invalid filterbank {self}")
        i = np.arange(self.num_bands)
        self.center_freqs = self.f_low * (self.f_high / self.f_low) ** (i / (self.num_bands - 1))

    @property
    def sigma_octaves(self) -> float:
        # exp(-0.5 (h/sigma)^2) = 1/sqrt(2) at h = half the -3 dB width
        return (self.bandwidth / 2.0) / np.sqrt(np.log(2.0))

    def gain(self, freqs, band: int) -> np.ndarray:
        """Amplitude response of one band at ``freqs`` (Hz); zero at and below DC."""
        f = np.asarray(freqs, dtype=np.float64)
        out = np.zeros_like(f)
        pos = f > 0
        octs = np.log2(f[pos] / self.center_freqs[band])
        out[pos] = np.exp(-0.5 * (octs / self.sigma_octaves) ** 2)
        return out

    def support(self, band: int) -> tuple[float, float]:
        """Frequency interval outside which the band gain is below the floor."""
        reach = self.sigma_octaves * np.sqrt(-2.0 * np.log(_GAIN_FLOOR))
        fc = self.center_freqs[band]
        return fc * 2.0 ** -reach, fc * 2.0 ** reach


def design_filterbank(spec: FilterBankSpec, fft_size: int, sample_rate: float) -> np.ndarray:
    """Per-band gains on the ``fft_size // 2 + 1`` real-FFT bins."""
    if spec.f_high >= sample_rate / 2:
        raise ConfigurationError(
            f"highest center {spec.f_high} Hz is not below Nyquist ({sample_rate / 2} Hz)")
    freqs = sfft.rfftfreq(fft_size, 1.0 / sample_rate)
    return np.stack([spec.gain(freqs, b) for b in range(spec.num_bands)])


def hilbert_envelope(x) -> np.ndarray:
    """Magnitude of the analytic signal along the last axis (FFT Hilbert transform)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1] if x.ndim else 0
    if n == 0:
        raise ShapeError("hilbert_envelope needs a non-empty input")
    spec = sfft.fft(x, axis=-1)
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1:n // 2] = 2.0
    else:
        h[1:(n + 1) // 2] = 2.0
    return np.abs(sfft.ifft(spec * h, axis=-1)).astype(np.float32)


def _rate_ratio(target: float, source: float) -> Fraction:
    """Nearest exact up/down ratio for ``target / source``."""
    return (Fraction(target).limit_denominator(1000) / Fraction(source).limit_denominator(1000))


def _decimate(env: np.ndarray, source_rate: float, target_rate: float) -> np.ndarray:
    ratio = _rate_ratio(target_rate, source_rate)
    if ratio == 1:
        return env
    # resample_poly low-passes with a Kaiser-windowed FIR before decimating
    return resample_poly(env, ratio.numerator, ratio.denominator, axis=-1)


class _BandEnveloper:
    """Shared machinery: one real FFT, then per-band analytic envelopes at reduced rate.

    A band's analytic signal only occupies the FFT bins in its support, so
    those bins are shifted down to DC and inverse-transformed at ``1/q`` of
    the original length. The magnitude is unaffected by the shift and the
    samples land exactly on every ``q``-th original sample.
    """

    def __init__(self, x: np.ndarray, sample_rate: float, max_span_hz: float, pad: int):
        self.sample_rate = float(sample_rate)
        n = x.shape[-1]
        q = max(1, int(self.sample_rate // (2.0 * max_span_hz)))
        self.q = q
        self.n = n
        self.N = q * sfft.next_fast_len(-(-(n + pad) // q))
        self.M = self.N // q
        self.X = sfft.rfft(x.astype(np.float64), self.N, axis=-1)
        self.freqs = sfft.rfftfreq(self.N, 1.0 / self.sample_rate)

    def bins(self, f_lo: float, f_hi: float) -> slice:
        lo = max(1, int(np.floor(f_lo * self.N / self.sample_rate)))
        hi = min(self.X.shape[-1], int(np.ceil(f_hi * self.N / self.sample_rate)) + 1)
        if hi - lo > self.M:
            raise ConfigurationError("band wider than the reduced-rate buffer")
        return slice(lo, hi)

    def envelope(self, sl: slice, gain: np.ndarray, rows=None) -> np.ndarray:
        X = self.X if rows is None else self.X[rows]
        Z = np.zeros(X.shape[:-1] + (self.M,), dtype=np.complex128)
        Z[..., :sl.stop - sl.start] = 2.0 * gain * X[..., sl]
        # ifft normalises by M; the full-length signal is normalised by N = q * M
        return np.abs(sfft.ifft(Z, axis=-1)) / self.q

    @property
    def reduced_rate(self) -> float:
        return self.sample_rate / self.q


def analyze(w: Waveform, spec: FilterBankSpec | None = None, frame_rate: float = FRAME_RATE,
            chunk: int = 16) -> Spectrogram:
    """Filterbank magnitude spectrogram (``num_bands x frames``)."""
    spec = spec or FilterBankSpec()
    x = w.samples
    if x.size == 0:
        raise ShapeError("cannot analyze an empty waveform")
    if spec.f_high >= w.sample_rate / 2:
        raise ConfigurationError(
            f"highest center {spec.f_high} Hz is not below Nyquist ({w.sample_rate / 2} Hz)")
    supports = [spec.support(b) for b in range(spec.num_bands)]
    max_span = max(hi - lo for lo, hi in supports)
    pad = int(0.25 * w.sample_rate)
    eng = _BandEnveloper(x, w.sample_rate, max_span, pad)
    n_frames = int(np.floor(x.size * frame_rate / w.sample_rate))
    out = np.zeros((spec.num_bands, n_frames), dtype=np.float32)
    for start in range(0, spec.num_bands, chunk):
        bands = range(start, min(start + chunk, spec.num_bands))
        envs = np.zeros((len(bands), eng.M))
        for j, b in enumerate(bands):
            sl = eng.bins(*supports[b])
            envs[j] = eng.envelope(sl, spec.gain(eng.freqs[sl], b))
        dec = _decimate(envs, eng.reduced_rate, frame_rate)
        out[start:start + len(bands)] = dec[:, :n_frames]
    np.maximum(out, 0.0, out=out)
    return Spectrogram(out, spec.center_freqs.copy(), frame_rate)


def subsample_bands(s: Spectrogram, factor: int = 4) -> Spectrogram:
    """Average consecutive groups of ``factor`` bands (128 -> 32 by default)."""
    if s.num_bands % factor:
        raise ShapeError(f"{s.num_bands} bands are not divisible into groups of {factor}")
    vals = s.values.reshape(s.num_bands // factor, factor, -1).mean(axis=1)
    centers = np.exp(np.log(s.band_centers).reshape(-1, factor).mean(axis=1))
    return Spectrogram(vals, centers, s.frame_rate)


def high_gamma_gain(freqs, low: float = 70.0, high: float = 150.0, transition: float = 5.0):
    """Flat pass band with raised-cosine skirts of width ``transition`` outside it."""
    f = np.asarray(freqs, dtype=np.float64)
    g = np.zeros_like(f)
    g[(f >= low) & (f <= high)] = 1.0
    lo_skirt = (f > low - transition) & (f < low)
    g[lo_skirt] = 0.5 - 0.5 * np.cos(np.pi * (f[lo_skirt] - (low - transition)) / transition)
    hi_skirt = (f > high) & (f < high + transition)
    g[hi_skirt] = 0.5 + 0.5 * np.cos(np.pi * (f[hi_skirt] - high) / transition)
    return g


def high_gamma_envelope(raw, sample_rate: float = ECOG_RATE, frame_rate: float = FRAME_RATE,
                        low: float = 70.0, high: float = 150.0, transition: float = 5.0,
                        chunk: int = 8) -> EcogEnvelope:
    """70-150 Hz analytic envelope of each electrode, resampled to ``frame_rate``."""
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    if sample_rate < 300:
        raise ConfigurationError(f"ECoG sample rate {sample_rate} Hz is below 300 Hz")
    if raw.shape[-1] == 0:
        raise ShapeError("empty ECoG recording")
    pad = int(0.5 * sample_rate)
    span = (high + transition) - (low - transition)
    n_frames = int(np.floor(raw.shape[-1] * frame_rate / sample_rate))
    out = np.zeros((raw.shape[0], n_frames), dtype=np.float32)
    for start in range(0, raw.shape[0], chunk):
        rows = raw[start:start + chunk]
        eng = _BandEnveloper(rows, sample_rate, span, pad)
        sl = eng.bins(low - transition, high + transition)
        env = eng.envelope(sl, high_gamma_gain(eng.freqs[sl], low, high, transition))
        out[start:start + rows.shape[0]] = _decimate(env, eng.reduced_rate, frame_rate)[:, :n_frames]
    np.maximum(out, 0.0, out=out)
    return EcogEnvelope(out, frame_rate)
