"""Bit-exact binary container for named float32 tensors.

Layout: magic ``MPAF``, u32 format version, u32 entry count; per entry a u32
name length, the UTF-8 name, u32 rank, u32 dims, then row-major little-endian
IEEE-754 float32 data.  Entry order is preserved, so save/load/save is
byte-identical.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MPAF"
FORMAT_VERSION = 1


def write_tensors(path, tensors: dict[str, np.ndarray],
                  version: int = FORMAT_VERSION) -> None:
    path = Path(path)
    parts = [MAGIC, struct.pack("<II", version, len(tensors))]
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    path.write_bytes(b"".join(parts))


def read_tensors(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {buf[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", buf, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        out[name] = arr.copy()
    return out
