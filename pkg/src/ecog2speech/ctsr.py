"""CTSR binary tensor files.

Layout: magic ``b"CTSR"``, version byte ``0x01``, dtype byte ``0x01`` (f32),
ndim byte, ``ndim`` little-endian u64 dimensions, then the row-major
little-endian f32 payload.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"CTSR"
VERSION = 1
DTYPE_F32 = 1


def encode(arr) -> bytes:
    a = np.asarray(arr, dtype="<f4", order="C")  # ascontiguousarray would promote 0-d to 1-d
    if a.ndim > 255:
        raise ValueError("too many dimensions for CTSR")
    head = MAGIC + bytes([VERSION, DTYPE_F32, a.ndim])
    head += struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + a.tobytes(order="C")


def decode(buf: bytes) -> np.ndarray:
    if len(buf) < 7:
        raise FormatError("file too short for a CTSR header", offset=len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", offset=0)
    if buf[4] != VERSION:
        raise FormatError(f"unsupported CTSR version {buf[4]}", offset=4)
    if buf[5] != DTYPE_F32:
        raise FormatError(f"unsupported dtype code {buf[5]}", offset=5)
    ndim = buf[6]
    end = 7 + 8 * ndim
    if len(buf) < end:
        raise FormatError("truncated dimension table", offset=len(buf))
    shape = struct.unpack(f"<{ndim}Q", buf[7:end])
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    if len(buf) != end + 4 * count:
        raise FormatError(f"payload is {len(buf) - end} bytes, expected {4 * count}", offset=end)
    return np.frombuffer(buf, dtype="<f4", count=count, offset=end).reshape(shape).astype(np.float32)


def save(path, arr, sidecar: dict | None = None) -> None:
    """Write ``arr`` to ``path``; ``sidecar`` goes to the same stem with ``.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(arr))
    os.replace(tmp, path)
    if sidecar is not None:
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load(path) -> np.ndarray:
    return decode(Path(path).read_bytes())


def load_sidecar(path) -> dict:
    p = Path(path).with_suffix(".json")
    return json.loads(p.read_text()) if p.exists() else {}
