"""Paired recordings: alignment, normalization, windowing and fold plans."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import ctsr
from .dsp import (ECOG_RATE, FRAME_RATE, EcogEnvelope, FilterBankSpec, Spectrogram, Waveform,
                  analyze, high_gamma_envelope, subsample_bands)
from .errors import ConfigurationError, FormatError, ShapeError
from .synth import Annotation

log = logging.getLogger(__name__)

WINDOW = 100
STIMULUS_LAG_S = 0.168


class ZeroVarianceWarning(UserWarning):
    """A channel had no variance over the training frames."""


@dataclass
class PairedRecording:
    ecog: EcogEnvelope
    spec: Spectrogram
    annotations: list = field(default_factory=list)  # Annotation in frames

    def __post_init__(self):
        if self.ecog.num_frames != self.spec.num_frames:
            raise ShapeError(
                f"ECoG has {self.ecog.num_frames} frames, spectrogram has {self.spec.num_frames}")
        ordered = sorted(self.annotations, key=lambda a: a.onset)
        for a in ordered:
            if not 0 <= a.onset < a.offset <= self.num_frames:
                raise ShapeError(f"annotation {a} outside recording of {self.num_frames} frames")
        for a, b in zip(ordered, ordered[1:]):
            if b.onset < a.offset:
                raise ShapeError(f"annotations overlap: {a} and {b}")

    @property
    def num_frames(self) -> int:
        return self.spec.num_frames


def lag_samples(rate: float, lag_s: float = STIMULUS_LAG_S) -> int:
    return int(round(lag_s * rate))


def delay(x: np.ndarray, n: int) -> np.ndarray:
    """Shift ``x`` later by ``n`` samples along the last axis, keeping its length."""
    if n == 0:
        return x.copy()
    out = np.zeros_like(x)
    out[..., n:] = x[..., :x.shape[-1] - n]
    return out


def align(speech: Waveform, ecog_raw, ecog_rate: float = ECOG_RATE, lag_s: float = STIMULUS_LAG_S,
          filterbank: Optional[FilterBankSpec] = None, annotations=()) -> PairedRecording:
    """Delay the speech by ``lag_s`` relative to the ECoG and extract both feature streams.

    ``annotations`` are given in speech samples and come back in aligned frames.
    """
    n_lag = lag_samples(speech.sample_rate, lag_s)
    if n_lag >= speech.samples.size:
        raise ConfigurationError(
            f"lag of {n_lag} samples is not shorter than the {speech.samples.size}-sample recording")
    delayed = Waveform(delay(speech.samples, n_lag), speech.sample_rate)
    spec = subsample_bands(analyze(delayed, filterbank))
    env = high_gamma_envelope(ecog_raw, ecog_rate)
    frames = min(spec.num_frames, env.num_frames)
    spec = Spectrogram(spec.values[:, :frames], spec.band_centers, spec.frame_rate)
    env = EcogEnvelope(env.values[:, :frames], env.frame_rate)
    notes = [to_frames(a, speech.sample_rate, n_lag) for a in annotations]
    notes = [a for a in notes if a.offset <= frames]
    return PairedRecording(env, spec, notes)


def to_frames(a: Annotation, rate: float, lag: int = 0, frame_rate: float = FRAME_RATE) -> Annotation:
    on = int(round((a.onset + lag) * frame_rate / rate))
    off = int(round((a.offset + lag) * frame_rate / rate))
    return Annotation(a.word_id, a.repetition, on, max(off, on + 1))


# -- normalization ------------------------------------------------------------

@dataclass
class NormStats:
    ecog_mean: np.ndarray
    ecog_std: np.ndarray
    spec_mean: np.ndarray
    spec_std: np.ndarray

    def to_array(self) -> np.ndarray:
        """``2 x (E + B)``: row 0 means, row 1 standard deviations, electrodes first."""
        return np.stack([np.concatenate([self.ecog_mean, self.spec_mean]),
                         np.concatenate([self.ecog_std, self.spec_std])]).astype(np.float32)

    @classmethod
    def from_array(cls, arr, electrodes: int = 64) -> "NormStats":
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] != 2:
            raise FormatError(f"normalization array must be 2 x N, got {arr.shape}")
        e = electrodes
        return cls(arr[0, :e], arr[1, :e], arr[0, e:], arr[1, e:])


def compute_norm_stats(rec: PairedRecording, frames=None, eps: float = 1e-6) -> NormStats:
    """Per-channel mean and std over the selected (training) frames."""
    sel = slice(None) if frames is None else frames
    ecog = rec.ecog.values[:, sel].astype(np.float64)
    spec = rec.spec.values[:, sel].astype(np.float64)
    stds = []
    for name, arr in (("electrode", ecog), ("band", spec)):
        sd = arr.std(axis=1)
        flat = np.flatnonzero(sd < eps)
        if flat.size:
            warnings.warn(f"zero-variance {name}s {flat.tolist()}; std clamped to {eps}",
                          ZeroVarianceWarning)
        stds.append(np.maximum(sd, eps))
    return NormStats(ecog.mean(axis=1).astype(np.float32), stds[0].astype(np.float32),
                     spec.mean(axis=1).astype(np.float32), stds[1].astype(np.float32))


def normalize(rec: PairedRecording, stats: NormStats) -> PairedRecording:
    e = (rec.ecog.values - stats.ecog_mean[:, None]) / stats.ecog_std[:, None]
    s = (rec.spec.values - stats.spec_mean[:, None]) / stats.spec_std[:, None]
    return PairedRecording(EcogEnvelope(e, rec.ecog.frame_rate),
                           Spectrogram(s, rec.spec.band_centers, rec.spec.frame_rate),
                           list(rec.annotations))


def denormalize_spec(values, stats: NormStats) -> np.ndarray:
    return np.asarray(values) * stats.spec_std[:, None] + stats.spec_mean[:, None]


def denormalize_ecog(values, stats: NormStats) -> np.ndarray:
    return np.asarray(values) * stats.ecog_std[:, None] + stats.ecog_mean[:, None]


# -- windows --------------------------------------------------------------------

@dataclass
class SegmentSet:
    """Fixed-length windows over a recording, addressed by start frame."""

    ecog: np.ndarray  # electrodes x frames
    spec: np.ndarray  # bands x frames
    offsets: np.ndarray
    length: int = WINDOW

    def __len__(self) -> int:
        return len(self.offsets)

    def __getitem__(self, i):
        o = int(self.offsets[i])
        return self.ecog[:, o:o + self.length], self.spec[:, o:o + self.length]

    def batch(self, idx) -> tuple[np.ndarray, np.ndarray]:
        """Stacked ``(N x E x L, N x B x L)`` windows for positions ``idx``."""
        offs = self.offsets[np.asarray(idx)]
        ev = sliding_window_view(self.ecog, self.length, axis=1)  # E x W x L
        sv = sliding_window_view(self.spec, self.length, axis=1)
        return (np.ascontiguousarray(ev[:, offs].transpose(1, 0, 2)),
                np.ascontiguousarray(sv[:, offs].transpose(1, 0, 2)))

    def subset(self, offsets) -> "SegmentSet":
        return SegmentSet(self.ecog, self.spec, np.asarray(offsets, dtype=np.int64), self.length)


def segment(rec: PairedRecording, length: int = WINDOW, hop: int = 1) -> SegmentSet:
    """Every window of ``length`` frames at ``hop``-frame spacing."""
    if rec.num_frames < length:
        raise ShapeError(f"recording of {rec.num_frames} frames is shorter than one {length}-frame window")
    offsets = np.arange(0, rec.num_frames - length + 1, hop, dtype=np.int64)
    return SegmentSet(rec.ecog.values, rec.spec.values, offsets, length)


# -- folds ----------------------------------------------------------------------

@dataclass
class FoldPlan:
    k: int
    test_sets: list  # per fold: sorted list of (word_id, repetition)


@dataclass
class FoldWindows:
    fold: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray  # one word-centered window per test utterance
    dense_test: np.ndarray  # every window overlapping a test utterance
    test_utterances: list

    @property
    def train_frames(self) -> np.ndarray:
        return _window_frames(self.train)


def kfold_split(rec: PairedRecording, k: int) -> FoldPlan:
    """Fold ``i`` tests on repetition ``i`` of every word."""
    reps = {}
    for a in rec.annotations:
        reps.setdefault(a.word_id, set()).add(a.repetition)
    if not reps:
        raise ConfigurationError("recording has no word annotations to fold on")
    bad = {w: sorted(r) for w, r in reps.items() if r != set(range(k))}
    if bad:
        w, r = next(iter(bad.items()))
        raise ConfigurationError(f"word {w} has repetitions {r}; k={k} needs exactly 0..{k - 1}")
    return FoldPlan(k, [sorted((w, i) for w in reps) for i in range(k)])


def _window_frames(offsets, length: int = WINDOW) -> np.ndarray:
    if len(offsets) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.unique((np.asarray(offsets)[:, None] + np.arange(length)).ravel())


def fold_windows(rec: PairedRecording, plan: FoldPlan, fold: int, hop: int = 1,
                 val_fraction: float = 0.1, val_block: int = 4 * WINDOW,
                 length: int = WINDOW) -> FoldWindows:
    """Training, validation and test windows for one fold.

    Training windows never touch a frame of a test utterance. Validation
    windows are whole contiguous blocks of ``val_block`` start frames (every
    ``round(1 / val_fraction)``-th block of the clean region), and training
    windows sharing any frame with a validation window are dropped, so the
    validation loss is measured on frames the optimiser never saw.
    """
    if not 0 <= fold < plan.k:
        raise ConfigurationError(f"fold {fold} outside 0..{plan.k - 1}")
    wanted = set(plan.test_sets[fold])
    tests = [a for a in rec.annotations if (a.word_id, a.repetition) in wanted]
    n = rec.num_frames
    in_test = _covered(n, [(a.onset, a.offset) for a in tests])
    starts = np.arange(0, n - length + 1)
    hits = _window_hits(in_test, starts, length)
    clean = starts[hits == 0]
    dense = starts[hits > 0]

    val = np.zeros(0, dtype=np.int64)
    train = clean
    if val_fraction > 0 and len(clean):
        every = max(2, int(round(1.0 / val_fraction)))
        is_val = (clean // val_block) % every == every - 1
        val = clean[is_val]
        in_val = _covered(n, [(o, o + length) for o in val])
        train = clean[_window_hits(in_val, clean, length) == 0]
    if hop > 1:
        train = train[train % hop == 0]

    centered = np.array([min(max((a.onset + a.offset) // 2 - length // 2, 0), n - length)
                         for a in tests], dtype=np.int64)
    return FoldWindows(fold, train, val, centered, dense, tests)


def _covered(n: int, spans) -> np.ndarray:
    """Boolean mask of frames inside any half-open ``(start, stop)`` span."""
    marks = np.zeros(n + 1, dtype=np.int64)
    for a, b in spans:
        marks[a] += 1
        marks[b] -= 1
    return np.cumsum(marks)[:n] > 0


def _window_hits(mask: np.ndarray, starts: np.ndarray, length: int) -> np.ndarray:
    """Number of masked frames inside each window."""
    csum = np.concatenate([[0], np.cumsum(mask)])
    return csum[starts + length] - csum[starts]


# -- sessions on disk ------------------------------------------------------------

def save_session(path, rec: PairedRecording, meta: dict) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    ctsr.save(path / "ecog.ctsr", rec.ecog.values, rec.ecog.sidecar())
    ctsr.save(path / "spec.ctsr", rec.spec.values, rec.spec.sidecar())
    notes = [{"word_id": a.word_id, "repetition": a.repetition, "onset_frame": a.onset,
              "offset_frame": a.offset} for a in rec.annotations]
    (path / "annotations.json").write_text(json.dumps(notes, indent=1))
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_session(path) -> tuple[PairedRecording, dict]:
    path = Path(path)
    for name in ("ecog.ctsr", "spec.ctsr", "annotations.json", "meta.json"):
        if not (path / name).exists():
            raise FormatError(f"session {path} is missing {name}")
    ecog = ctsr.load(path / "ecog.ctsr")
    spec = ctsr.load(path / "spec.ctsr")
    e_side = ctsr.load_sidecar(path / "ecog.ctsr")
    s_side = ctsr.load_sidecar(path / "spec.ctsr")
    centers = s_side.get("band_centers") or list(range(spec.shape[0]))
    notes = [Annotation(d["word_id"], d["repetition"], d["onset_frame"], d["offset_frame"])
             for d in json.loads((path / "annotations.json").read_text())]
    rec = PairedRecording(EcogEnvelope(ecog, e_side.get("frame_rate", FRAME_RATE)),
                          Spectrogram(spec, centers, s_side.get("frame_rate", FRAME_RATE)), notes)
    return rec, json.loads((path / "meta.json").read_text())
