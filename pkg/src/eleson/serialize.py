"""Binary parameter container.

Layout (little-endian): magic ``ELSN``, u16 format version, u32 entry count,
then per entry a u16 name length, UTF-8 name, u8 rank, u32 per dim, and the
float32 payload in C order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ELSN"
VERSION = 1


class FormatError(ValueError):
    pass


def dumps(arrays: dict[str, np.ndarray]) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<HI", VERSION, len(arrays))
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4", order="C")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    return bytes(out)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise FormatError("not an ELSN file")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported ELSN version {version}")
    pos = 10
    arrays = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(dims)
            pos += 4 * size
            arrays[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise FormatError("truncated ELSN file") from exc
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes in ELSN file")
    return arrays


def save(arrays: dict[str, np.ndarray], path: str | Path) -> int:
    blob = dumps(arrays)
    Path(path).write_bytes(blob)
    return len(blob)


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
