"""Binary tensor files and PPM image export.

Tensor files (.atkt) are little-endian throughout:

    magic 'ATKT' | u32 version=1 | u32 ndim | ndim * u32 dims | f64 data, row-major

The same blob layout is embedded verbatim inside model files (see zoo).
"""

from __future__ import annotations

import struct

import numpy as np

TENSOR_MAGIC = b"ATKT"
TENSOR_VERSION = 1


class FormatError(ValueError):
    pass


class BadMagicError(FormatError):
    pass


class BadVersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    header = TENSOR_MAGIC + struct.pack("<II", TENSOR_VERSION, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return header + dims + arr.tobytes()


class _Reader:
    """Cursor over a byte string that raises TruncatedError on short reads."""

    def __init__(self, buf: bytes, where: str):
        self.buf = buf
        self.pos = 0
        self.where = where

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"{self.where}: expected {n} more bytes at offset {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def done(self) -> bool:
        return self.pos == len(self.buf)


def tensor_from_reader(r: _Reader) -> np.ndarray:
    if r.take(4) != TENSOR_MAGIC:
        raise BadMagicError(f"{r.where}: bad tensor magic")
    version = r.u32()
    if version != TENSOR_VERSION:
        raise BadVersionError(f"{r.where}: unsupported tensor version {version}")
    ndim = r.u32()
    shape = tuple(r.u32() for _ in range(ndim))
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    data = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64)
    return data.reshape(shape)


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf, str(path))
    arr = tensor_from_reader(r)
    if not r.done():
        raise FormatError(f"{path}: {len(buf) - r.pos} trailing bytes after tensor data")
    return arr


def save_ppm(path, image: np.ndarray) -> None:
    """Write a CHW float image in [0, 1] as an 8-bit binary PPM (P6)."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"save_ppm: need a 3xHxW image, got shape {image.shape}")
    q = np.clip(np.floor(255.0 * image + 0.5), 0, 255).astype(np.uint8)
    h, w = image.shape[1], image.shape[2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(q.transpose(1, 2, 0).tobytes())
