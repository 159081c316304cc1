"""Per-electrode impulse probing of a trained decoder, plus PGM and audio export."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import ctsr
from . import tensor as T
from .data import WINDOW, NormStats
from .dsp import FRAME_RATE, SPEECH_RATE, Spectrogram, Waveform
from .errors import ConfigurationError, ShapeError
from .inversion import SilentTargetWarning, invert_spectrogram
from .models import Decoder
from .tensor import Tensor
from .wavio import write_wav

log = logging.getLogger(__name__)

IMPULSE_START = 50
IMPULSE_STOP = 60  # exclusive


def make_impulse(electrode: int, amplitude: float, electrodes: int = 64,
                 length: int = WINDOW) -> np.ndarray:
    """``electrodes x length`` zeros with frames 50-59 of one electrode set to ``amplitude``."""
    if not 0 <= electrode < electrodes:
        raise ConfigurationError(f"electrode {electrode} outside 0..{electrodes - 1}")
    x = np.zeros((electrodes, length), dtype=np.float32)
    x[electrode, IMPULSE_START:IMPULSE_STOP] = amplitude
    return x


def _forward(model: Decoder, x: np.ndarray) -> np.ndarray:
    was = model.training
    model.eval()
    try:
        with T.no_grad():
            return model(Tensor(x)).data
    finally:
        model.train(was)


def impulse_response(model: Decoder, electrode: int, amplitude: float,
                     stats: Optional[NormStats] = None) -> np.ndarray:
    """Decoded ``bands x frames`` change caused by one electrode's impulse.

    The zero-input output is subtracted so biases drop out. With ``stats``
    the difference is rescaled to spectrogram units (the means cancel).
    """
    e = model.config.in_channels
    x = np.stack([make_impulse(electrode, amplitude, e), np.zeros((e, WINDOW), np.float32)])
    y = _forward(model, x)
    diff = y[0].astype(np.float64) - y[1]
    if stats is not None:
        diff = diff * stats.spec_std[:, None]
    return diff.astype(np.float32)


@dataclass
class ImpulseResponseMap:
    responses: np.ndarray  # electrodes x bands x frames
    amplitude: float
    units: str
    source: str = ""
    baseline_subtracted: bool = True

    def __len__(self) -> int:
        return self.responses.shape[0]

    def manifest(self) -> dict:
        return {"electrodes": len(self), "amplitude": self.amplitude, "units": self.units,
                "source": self.source, "baseline_subtracted": self.baseline_subtracted,
                "impulse_frames": [IMPULSE_START, IMPULSE_STOP - 1],
                "window_frames": int(self.responses.shape[2])}


def probe_all(model: Decoder, amplitude: float, stats: Optional[NormStats] = None,
              source: str = "") -> ImpulseResponseMap:
    e = model.config.in_channels
    x = np.stack([make_impulse(i, amplitude, e) for i in range(e)] + [np.zeros((e, WINDOW), np.float32)])
    y = _forward(model, x).astype(np.float64)
    diff = y[:-1] - y[-1]
    if stats is not None:
        diff = diff * stats.spec_std[None, :, None]
    units = "spectrogram" if stats is not None else "normalized"
    return ImpulseResponseMap(diff.astype(np.float32), float(amplitude), units, source)


# -- images ------------------------------------------------------------------------

def to_gray(values) -> np.ndarray:
    """Min-max scale to 0..255 with row 0 holding the highest band; constant input is mid-gray."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ShapeError(f"image values must be 2-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ConfigurationError("image values must be finite")
    lo, hi = v.min(), v.max()
    if hi == lo:
        img = np.full(v.shape, 128, dtype=np.uint8)
    else:
        img = np.round((v - lo) / (hi - lo) * 255.0).astype(np.uint8)
    return img[::-1]


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Reader for the exact header layout ``write_pgm`` emits."""
    magic, dims, _, data = Path(path).read_bytes().split(b"\n", 3)
    if magic != b"P5":
        raise ConfigurationError(f"{path} is not a binary PGM")
    w, h = (int(v) for v in dims.split())
    return np.frombuffer(data, dtype=np.uint8, count=w * h).reshape(h, w)


def export_pgm(values, path) -> None:
    write_pgm(path, to_gray(values))


def montage(responses: np.ndarray, grid: int = 8, margin: int = 2) -> np.ndarray:
    """Tile ``grid x grid`` responses, each scaled on its own, separated by black margins.

    The image is ``grid * (bands + margin)`` tall and ``grid * (frames + margin)`` wide.
    """
    n, b, f = responses.shape
    if n > grid * grid:
        raise ShapeError(f"{n} responses do not fit a {grid}x{grid} montage")
    img = np.zeros((grid * (b + margin), grid * (f + margin)), dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, grid)
        y, x = r * (b + margin), c * (f + margin)
        img[y:y + b, x:x + f] = to_gray(responses[i])
    return img


# -- audio -------------------------------------------------------------------------

def sonify(ir, iterations: int = 100, seed: int = 0, sample_rate: int = SPEECH_RATE) -> Waveform:
    """Waveform for one response; negative values are clipped before inversion."""
    if isinstance(ir, Spectrogram):
        target = ir
    else:
        vals = np.asarray(ir, dtype=np.float32)
        target = Spectrogram(vals, np.arange(1, vals.shape[0] + 1, dtype=np.float64), FRAME_RATE)
    clipped = Spectrogram(np.clip(target.values, 0.0, None), target.band_centers, target.frame_rate)
    return invert_spectrogram(clipped, iterations=iterations, seed=seed, sample_rate=sample_rate)


def write_probe(out_dir, irmap: ImpulseResponseMap, band_centers=None, iterations: int = 100,
                seed: int = 0, margin: int = 2, audio: bool = True) -> dict:
    """``elec_NN.{ctsr,pgm,wav}``, ``montage.pgm`` and ``manifest.json`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    side = {"frame_rate": FRAME_RATE}
    if band_centers is not None:
        side["band_centers"] = [float(c) for c in band_centers]
    silent = []
    for i, r in enumerate(irmap.responses):
        stem = out / f"elec_{i:02d}"
        ctsr.save(stem.with_suffix(".ctsr"), r, side)
        export_pgm(r, stem.with_suffix(".pgm"))
        if audio:
            centers = band_centers if band_centers is not None else np.arange(1, r.shape[0] + 1)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", SilentTargetWarning)
                wav = sonify(Spectrogram(r, centers), iterations, seed)
            if any(issubclass(w.category, SilentTargetWarning) for w in caught):
                silent.append(i)
            write_wav(stem.with_suffix(".wav"), wav)
    write_pgm(out / "montage.pgm", montage(irmap.responses, margin=margin))
    manifest = {**irmap.manifest(), "montage_margin": margin, "audio": audio,
                "inversion_iterations": iterations if audio else 0, "seed": seed,
                "silent_electrodes": silent}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest
