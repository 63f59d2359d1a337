"""Flat binary weight container.

Layout: the 8-byte magic ``RSDK0001`` followed by one record per parameter
until end of file. Each record is ``u64 name_len | name (UTF-8) | u64 rank |
rank x u64 extents | prod(extents) x f64`` with every integer and float
little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"RSDK0001"


def dumps(state: dict) -> bytes:
    out = [MAGIC]
    for name, arr in state.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        out.append(struct.pack("<Q", len(raw)))
        out.append(raw)
        out.append(struct.pack("<Q", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def loads(buf: bytes) -> dict:
    if buf[:8] != MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    pos, state = 8, {}

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError("truncated checkpoint record", pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        (nlen,) = struct.unpack("<Q", take(8))
        try:
            name = take(nlen).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("parameter name is not UTF-8", pos - nlen) from None
        (rank,) = struct.unpack("<Q", take(8))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(shape)) if rank else 1
        state[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    return state


def save(path, state: dict):
    Path(path).write_bytes(dumps(state))


def load(path) -> dict:
    return loads(Path(path).read_bytes())
