"""Synthetic paired sessions: stimuli, their spectrogram, and teacher-encoded ECoG."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import STIMULUS_LAG_S, PairedRecording, delay, lag_samples, to_frames
from .dsp import FRAME_RATE, SPEECH_RATE, FilterBankSpec, Spectrogram, Waveform, analyze, subsample_bands
from .errors import ConfigurationError
from .synth import (Stimuli, TeacherSpec, diagonal_teacher, snr_to_noise_std, strf_teacher,
                    synth_stimuli, teacher_encode)


@dataclass
class StimulusConfig:
    words: int = 50
    reps: int = 3
    seed: int = 0


@dataclass
class TeacherConfig:
    mode: str = "linear"
    kind: str = "strf"  # "strf" or "diagonal"
    taps: int = 8
    noise_snr_db: Optional[float] = None  # None means noiseless
    gain: float = 1.0
    inhibition: float = 0.6  # strf only: depth of the inhibitory lobe
    decay: tuple = (1.0, 3.0)  # strf only: range of temporal time constants, frames
    seed: int = 0

    def build(self, num_bands: int = 32) -> TeacherSpec:
        noise = 0.0 if self.noise_snr_db is None else snr_to_noise_std(self.noise_snr_db)
        kw = dict(mode=self.mode, gain=self.gain, noise_std=noise)
        if self.kind == "diagonal":
            return diagonal_teacher(num_bands, taps=self.taps, seed=self.seed, **kw)
        if self.kind == "strf":
            return strf_teacher(num_bands, taps=self.taps, seed=self.seed,
                                inhibition=self.inhibition, decay=tuple(self.decay), **kw)
        raise ConfigurationError(f"unknown teacher kind {self.kind!r}")


@dataclass
class SessionConfig:
    stimuli: StimulusConfig = field(default_factory=StimulusConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    lag_s: float = STIMULUS_LAG_S

    def to_dict(self) -> dict:
        return asdict(self)


def stimulus_spectrogram(stim: Stimuli, lag_s: float = STIMULUS_LAG_S,
                         filterbank: Optional[FilterBankSpec] = None) -> tuple[Spectrogram, list]:
    """32-band spectrogram of the lagged stimulus and the annotations in frames."""
    fs = stim.waveform.sample_rate
    n_lag = lag_samples(fs, lag_s)
    wav = Waveform(delay(stim.waveform.samples, n_lag), fs)
    spec = subsample_bands(analyze(wav, filterbank))
    notes = [to_frames(a, fs, n_lag) for a in stim.annotations]
    return spec, [a for a in notes if a.offset <= spec.num_frames]


def build_session(cfg: SessionConfig, spec: Optional[Spectrogram] = None,
                  notes: Optional[list] = None) -> tuple[PairedRecording, dict]:
    """Pure function of ``cfg``. Pass ``spec``/``notes`` to reuse an analysed stimulus.

    The teacher sees the spectrogram divided by its global RMS so kernel
    weights act on order-one inputs; the factor is recorded in the metadata.
    """
    if spec is None:
        s = cfg.stimuli
        stim = synth_stimuli(s.words, s.reps, s.seed)
        spec, notes = stimulus_spectrogram(stim, cfg.lag_s)
    scale = float(1.0 / max(np.sqrt(np.mean(spec.values.astype(np.float64) ** 2)), 1e-12))
    teacher = cfg.teacher.build(spec.num_bands)
    ecog = teacher_encode(Spectrogram(spec.values * scale, spec.band_centers, spec.frame_rate),
                          teacher)
    meta = {
        "speech_rate": SPEECH_RATE,
        "frame_rate": FRAME_RATE,
        "lag_s": cfg.lag_s,
        "teacher_input_scale": scale,
        "teacher": teacher.describe(),
        "config": cfg.to_dict(),
    }
    return PairedRecording(ecog, spec, list(notes)), meta
