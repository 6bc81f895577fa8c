"""MVCK checkpoint container.

Layout (little endian)::

    b"MVCK\\x00\\x01" | u32 count | count x (u16 name_len | utf-8 name | u8 rank |
                                              rank x u32 extent | float32 payload)
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from muval.errors import FormatError

MAGIC = b"MVCK\x00\x01"


def save_checkpoint(tensors: Mapping[str, np.ndarray], path) -> None:
    chunks = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated checkpoint")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, expected: Mapping[str, tuple] | None = None) -> dict[str, np.ndarray]:
    """Read every tensor; with ``expected`` the names and shapes must match exactly."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path}: not an MVCK checkpoint")
    (count,) = r.unpack("<I")
    out = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        try:
            name = r.take(nlen).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}: tensor name is not UTF-8") from exc
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I")
        size = int(np.prod(shape))
        out[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(r.raw):
        raise FormatError(f"{path}: {len(r.raw) - r.pos} trailing bytes")
    if expected is not None:
        for name, shape in expected.items():
            if name not in out:
                raise FormatError(f"{path}: missing tensor {name!r}")
            if out[name].shape != tuple(shape):
                raise FormatError(f"{path}: tensor {name!r} has shape {out[name].shape}, expected {tuple(shape)}")
        extra = set(out) - set(expected)
        if extra:
            raise FormatError(f"{path}: unexpected tensors {sorted(extra)}")
    return out
