"""Binary checkpoint container for named weight arrays.

Layout (all integers little-endian unsigned 32-bit):

    magic  b"DRCW"
    version u32 (currently 1)
    then per array: name_len u32, name utf-8 bytes, rank u32,
                    dims u32 * rank, payload float32 row-major

Array order is preserved, so writing the same mapping twice yields
byte-identical files.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"DRCW"
VERSION = 1


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", VERSION))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)) + encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError(f"header: expected 8 bytes, file has {len(raw)}")
    if raw[:4] != MAGIC:
        raise FormatError(f"magic: expected {MAGIC!r}, got {raw[:4]!r}")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != VERSION:
        raise FormatError(f"version: expected {VERSION}, got {version}")

    arrays: dict[str, np.ndarray] = {}
    pos = 8
    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"truncated file while reading {what}")
        chunk = raw[pos:pos + n]
        pos += n
        return chunk

    while pos < len(raw):
        name_len = struct.unpack("<I", take(4, "name length"))[0]
        name = take(name_len, "name").decode("utf-8")
        rank = struct.unpack("<I", take(4, f"rank of {name!r}"))[0]
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of {name!r}"))
        count = int(np.prod(dims)) if rank else 1
        payload = take(4 * count, f"payload of {name!r}")
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return arrays
