"""Waveform reconstruction from a band-envelope spectrogram.

Alternating projections between the set of subband signals that a real
waveform can produce through the filterbank and the set of subband signals
whose magnitudes equal the target envelopes. The first projection is the
least-squares resynthesis through the same filters, the second keeps each
subband's phase and swaps in the target magnitude. Because both steps are
projections, the envelope-domain error can only go down.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np
import scipy.fft as sfft

from .dsp import FRAME_RATE, SPEECH_RATE, FilterBankSpec, Spectrogram, Waveform
from .errors import ConfigurationError

log = logging.getLogger(__name__)


class SilentTargetWarning(UserWarning):
    """The target spectrogram carries no energy; a silent waveform was returned."""


def upsample_target(target: Spectrogram, spec: FilterBankSpec, n_samples: int,
                    sample_rate: float) -> np.ndarray:
    """Target envelopes on every filterbank band and every audio sample.

    Bands are interpolated linearly in band index (log frequency); frames
    are interpolated linearly in time with frame ``j`` at ``j / frame_rate``.
    """
    vals = np.clip(np.asarray(target.values, dtype=np.float64), 0.0, None)
    nb, nf = vals.shape
    if spec.num_bands % nb:
        raise ConfigurationError(f"{nb} target bands do not divide {spec.num_bands} filterbank bands")
    group = spec.num_bands // nb
    src = np.arange(nb) * group + (group - 1) / 2.0
    dst = np.arange(spec.num_bands)
    per_band = np.empty((spec.num_bands, nf))
    for j in range(nf):
        per_band[:, j] = np.interp(dst, src, vals[:, j])
    frame_t = np.arange(nf) / target.frame_rate
    sample_t = np.arange(n_samples) / sample_rate
    out = np.empty((spec.num_bands, n_samples))
    for b in range(spec.num_bands):
        out[b] = np.interp(sample_t, frame_t, per_band[b])
    return out


class SubbandFrame:
    """Analytic filterbank analysis and its least-squares inverse.

    Each band keeps only the FFT bins inside its support, shifted down to
    DC and inverse-transformed at a reduced length ``M_b``; the samples sit
    at ``m * T / M_b`` on the signal period ``T``. Band norms are weighted by
    ``n_fft / M_b`` so every band counts in proportion to its duration, not
    its sample count. ``synthesis`` is the exact minimiser of that weighted
    squared error over real signals, which makes it a projection.
    """

    def __init__(self, spec: FilterBankSpec, n_fft: int, sample_rate: float,
                 min_rate: float = 400.0, floor: float = 1e-6):
        self.n_fft = n_fft
        self.sample_rate = sample_rate
        freqs = sfft.rfftfreq(n_fft, 1.0 / sample_rate)
        self.n_bins = freqs.size
        period = n_fft / sample_rate
        self.slices, self.gains, self.lengths = [], [], []
        denom = np.zeros(self.n_bins)
        for b in range(spec.num_bands):
            lo_f, hi_f = spec.support(b)
            lo = max(1, int(np.floor(lo_f * period)))
            hi = min(self.n_bins - 1, int(np.ceil(hi_f * period)) + 1)
            g = spec.gain(freqs[lo:hi], b)
            m = sfft.next_fast_len(max(hi - lo, int(np.ceil(min_rate * period))))
            self.slices.append(slice(lo, hi))
            self.gains.append(g)
            self.lengths.append(m)
            denom[lo:hi] += 2.0 * g * g
        self.support = denom > floor * denom.max()
        self.inv_denom = np.where(self.support, 1.0 / np.where(self.support, denom, 1.0), 0.0)
        self.weights = np.array([n_fft / m for m in self.lengths])

    def sample_times(self, b: int) -> np.ndarray:
        return np.arange(self.lengths[b]) * (self.n_fft / self.sample_rate) / self.lengths[b]

    def project_signal(self, x: np.ndarray) -> np.ndarray:
        """Restrict ``x`` to the frequencies the filterbank covers."""
        X = sfft.rfft(x, self.n_fft)
        return sfft.irfft(X * self.support, self.n_fft)

    def analysis(self, x: np.ndarray) -> list:
        X = sfft.rfft(x, self.n_fft)
        out = []
        for sl, g, m in zip(self.slices, self.gains, self.lengths):
            Z = np.zeros(m, dtype=np.complex128)
            Z[:sl.stop - sl.start] = 2.0 * g * X[sl]
            out.append(sfft.ifft(Z) * (m / self.n_fft))
        return out

    def synthesis(self, subbands: list) -> np.ndarray:
        X = np.zeros(self.n_bins, dtype=np.complex128)
        for y, sl, g, m in zip(subbands, self.slices, self.gains, self.lengths):
            Yb = sfft.fft(y)[:sl.stop - sl.start]
            X[sl] += g * Yb * (self.n_fft / m)
        return sfft.irfft(X * self.inv_denom, self.n_fft)

    def error(self, subbands: list, env: list) -> float:
        num = sum(w * np.sum((np.abs(z) - e) ** 2) for w, z, e in zip(self.weights, subbands, env))
        den = sum(w * np.sum(e * e) for w, e in zip(self.weights, env))
        return float(np.sqrt(num / den))


def invert_spectrogram(target: Spectrogram, iterations: int = 100, seed: int = 0,
                       sample_rate: float = SPEECH_RATE, spec: FilterBankSpec | None = None,
                       return_errors: bool = False):
    """Recover a waveform whose filterbank envelopes match ``target``.

    Returns the waveform, or ``(waveform, errors)`` with the relative
    envelope error of the seed signal followed by the error after every
    iteration.
    """
    if iterations < 1:
        raise ConfigurationError(f"iterations must be >= 1, got {iterations}")
    spec = spec or FilterBankSpec()
    hop = sample_rate / target.frame_rate
    n = int(round(target.num_frames * hop))
    values = np.clip(target.values, 0.0, None)
    if not np.any(values > 0):
        warnings.warn("target spectrogram is all zero; returning silence", SilentTargetWarning)
        wav = Waveform(np.zeros(n, np.float32), int(sample_rate))
        return (wav, [0.0]) if return_errors else wav

    pad = int(0.25 * sample_rate)
    n_fft = sfft.next_fast_len(n + pad)
    frame = SubbandFrame(spec, n_fft, sample_rate)
    per_band = upsample_target(Spectrogram(values, target.band_centers, target.frame_rate),
                               spec, target.num_frames, target.frame_rate)
    frame_t = np.arange(target.num_frames) / target.frame_rate
    # the target is zero beyond the signal, i.e. over the padding
    env = [np.interp(frame.sample_times(b), frame_t, per_band[b], right=0.0)
           * (frame.sample_times(b) < n / sample_rate) for b in range(spec.num_bands)]

    rng = np.random.default_rng(seed)
    x = frame.project_signal(rng.standard_normal(n_fft) * float(np.sqrt(np.mean(values ** 2))))
    sub = frame.analysis(x)
    errors = [frame.error(sub, env)]
    for _ in range(iterations):
        proj = []
        for z, e in zip(sub, env):
            mag = np.abs(z)
            proj.append(e * np.where(mag > 0, z / np.where(mag > 0, mag, 1.0), 1.0))
        x = frame.synthesis(proj)
        sub = frame.analysis(x)
        errors.append(frame.error(sub, env))
    log.debug("inversion error %.4f -> %.4f after %d iterations", errors[0], errors[-1], iterations)
    wav = Waveform(x[:n].astype(np.float32), int(sample_rate))
    return (wav, errors) if return_errors else wav
