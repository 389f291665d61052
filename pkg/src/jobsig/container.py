"""Low-level framing shared by the .arcd / .arcm / .arbm binary formats.

All multi-byte integers and floats are little-endian.  Strings are
length-prefixed (u16) UTF-8.  Weight payloads are raw 32-bit floats.
Files are written atomically (temp file + rename) so interrupted runs never
leave half-written artifacts behind.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import ModelIOError


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


class Reader:
    """Cursor over an in-memory container payload with bounds checking."""

    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelIOError(f"{self.what}: truncated file")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def read_string(self) -> str:
        (n,) = self.unpack("H")
        return self.take(n).decode("utf-8")

    def read_f32_array(self, shape) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)

    def read_f64_array(self, shape) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        raw = self.take(8 * count)
        return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)

    def expect_end(self) -> None:
        if self.pos != len(self.data):
            raise ModelIOError(f"{self.what}: {len(self.data) - self.pos} trailing bytes")


class Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def pack(self, fmt: str, *values) -> None:
        self.parts.append(struct.pack("<" + fmt, *values))

    def write_string(self, s: str) -> None:
        raw = s.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ModelIOError("string too long for container format")
        self.pack("H", len(raw))
        self.parts.append(raw)

    def write_f32_array(self, arr: np.ndarray) -> None:
        self.parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    def write_f64_array(self, arr: np.ndarray) -> None:
        self.parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


def check_magic(reader: Reader, magic: bytes, version: int) -> None:
    got = reader.take(4)
    if got != magic:
        raise ModelIOError(f"{reader.what}: bad magic {got!r}, expected {magic!r}")
    (ver,) = reader.unpack("H")
    if ver != version:
        raise ModelIOError(f"{reader.what}: unsupported version {ver} (expected {version})")
