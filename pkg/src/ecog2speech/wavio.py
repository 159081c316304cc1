"""RIFF/WAVE PCM16 mono read and write."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dsp import Waveform
from .errors import FormatError


def write_wav(path, w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples.astype(np.float64) * 32767.0), -32768, 32767).astype("<i2")
    data = pcm.tobytes()
    header = struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(data), b"WAVE", b"fmt ", 16,
                         1, 1, int(w.sample_rate), int(w.sample_rate) * 2, 2, 16, b"data", len(data))
    Path(path).write_bytes(header + data)


def read_wav(path) -> Waveform:
    buf = Path(path).read_bytes()
    if len(buf) < 12 or buf[:4] != b"RIFF" or buf[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE file", 0)
    pos, fmt, data = 12, None, None
    while pos + 8 <= len(buf):
        cid, size = struct.unpack_from("<4sI", buf, pos)
        body = pos + 8
        if cid == b"fmt ":
            if size < 16 or body + 16 > len(buf):
                raise FormatError("truncated fmt chunk", body)
            fmt = struct.unpack_from("<HHIIHH", buf, body)
            tag, channels, _, _, _, bits = fmt
            if tag != 1:
                raise FormatError(f"format tag {tag} is not PCM", body)
            if channels != 1:
                raise FormatError(f"{channels} channels; only mono is supported", body + 2)
            if bits != 16:
                raise FormatError(f"{bits}-bit samples; only 16-bit is supported", body + 14)
        elif cid == b"data":
            if fmt is None:
                raise FormatError("data chunk before fmt chunk", pos)
            if body + size > len(buf):
                raise FormatError(f"data chunk declares {size} bytes, file ends early", len(buf))
            if size == 0:
                raise FormatError("empty data chunk: file has no samples", body)
            data = np.frombuffer(buf, dtype="<i2", count=size // 2, offset=body)
            break
        pos = body + size + (size & 1)
    if fmt is None:
        raise FormatError("missing fmt chunk", pos)
    if data is None:
        raise FormatError("missing data chunk", pos)
    return Waveform(data.astype(np.float32) / 32767.0, fmt[2])
