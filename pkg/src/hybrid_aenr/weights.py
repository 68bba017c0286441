"""Named-tensor store and its binary file format.

Layout (all integers little-endian)::

    b"AULC"                 magic
    u16                     format version (1)
    u32                     tensor count
    per tensor:
        u16                 path length in bytes
        bytes               UTF-8 path
        u8                  rank
        u32 * rank          dims
        f32 * prod(dims)    row-major values
"""

from __future__ import annotations

import hashlib
import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np

MAGIC = b"AULC"
VERSION = 1


class WeightFormatError(ValueError):
    pass


class WeightStore(dict):
    """``path -> float32 ndarray``. Insertion order is preserved on disk."""

    def __init__(self, tensors: Mapping[str, np.ndarray] | None = None):
        super().__init__()
        for k, v in (tensors or {}).items():
            self[k] = v

    def __setitem__(self, key, value):
        super().__setitem__(str(key), np.ascontiguousarray(value, dtype="<f4"))

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<HI", VERSION, len(self))]
        for path, arr in self.items():
            name = path.encode("utf-8")
            parts.append(struct.pack("<H", len(name)))
            parts.append(name)
            parts.append(struct.pack("<B", arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(arr.tobytes(order="C"))
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "WeightStore":
        if data[:4] != MAGIC:
            raise WeightFormatError("not a weight file (bad magic)")
        off = 4
        try:
            version, count = struct.unpack_from("<HI", data, off)
            off += 6
            if version != VERSION:
                raise WeightFormatError(f"unsupported weight format version {version}")
            store = cls()
            for _ in range(count):
                (n,) = struct.unpack_from("<H", data, off)
                off += 2
                path = data[off:off + n].decode("utf-8")
                off += n
                (rank,) = struct.unpack_from("<B", data, off)
                off += 1
                dims = struct.unpack_from(f"<{rank}I", data, off)
                off += 4 * rank
                size = int(np.prod(dims, dtype=np.int64))
                if off + 4 * size > len(data):
                    raise WeightFormatError(f"truncated tensor data for {path!r}")
                arr = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(dims)
                off += 4 * size
                if path in store:
                    raise WeightFormatError(f"duplicate tensor {path!r}")
                store[path] = arr
        except struct.error as exc:
            raise WeightFormatError(f"truncated weight file: {exc}") from None
        if off != len(data):
            raise WeightFormatError(f"{len(data) - off} trailing bytes after last tensor")
        return store

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "WeightStore":
        return cls.from_bytes(Path(path).read_bytes())

    def checksum(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()
