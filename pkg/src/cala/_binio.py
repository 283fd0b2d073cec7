"""Little-endian binary helpers and atomic file writes."""

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from ._validation import FormatError

MAGIC_LEN = 8


def _umask():
    # mkstemp creates 0600 files; published outputs should follow the process umask
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` via a temp file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class Reader:
    """Sequential reader over a bytes buffer with bounds checks."""

    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated {self.what}: needed {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def magic(self, expected: bytes) -> None:
        got = self.data[:MAGIC_LEN]
        if got != expected:
            raise FormatError(f"unrecognized {self.what} (magic {got!r}, expected {expected!r})")
        self.pos = MAGIC_LEN

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals

    def u8(self) -> int:
        return self.take(1)[0]

    def f32(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float64)

    def f64(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)

    def done(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes in {self.what}")


def u32(*values) -> bytes:
    return struct.pack(f"<{len(values)}I", *values)


def f32(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def f64(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()
