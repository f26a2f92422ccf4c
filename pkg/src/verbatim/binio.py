"""Versioned binary envelopes shared by on-disk artifacts.

Every binary file this package writes starts with a 4-byte ASCII magic and a
little-endian u32 format version, followed by format-specific sections.  All
integers are little-endian fixed width; arrays are raw contiguous payloads
prefixed by their element count.  Writers are deterministic: the same inputs
produce byte-identical files.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np


class FormatError(ValueError):
    """Raised when a binary artifact has the wrong magic, version, or shape."""


class VersionError(FormatError):
    """Raised when an artifact's format version doesn't match this build."""


def write_magic(fh: BinaryIO, magic: bytes, version: int) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be exactly 4 bytes")
    fh.write(magic)
    fh.write(struct.pack("<I", version))


def read_magic(fh: BinaryIO, magic: bytes, expected_version: int) -> int:
    got = fh.read(4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(fh, 4))
    if version != expected_version:
        raise VersionError(
            f"unsupported format version {version} (expected {expected_version})"
        )
    return version


def write_u32(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<I", value))


def write_u64(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<Q", value))


def read_u32(fh: BinaryIO) -> int:
    return struct.unpack("<I", _read_exact(fh, 4))[0]


def read_u64(fh: BinaryIO) -> int:
    return struct.unpack("<Q", _read_exact(fh, 8))[0]


def write_array(fh: BinaryIO, arr: np.ndarray) -> None:
    """Write a count-prefixed contiguous array in little-endian byte order."""
    arr = np.ascontiguousarray(arr)
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    write_u64(fh, arr.size)
    fh.write(le.tobytes())


def read_array(fh: BinaryIO, dtype: str) -> np.ndarray:
    """Read a count-prefixed array written by :func:`write_array`.

    ``dtype`` is a little-endian numpy dtype string such as ``"<u4"``.
    """
    count = read_u64(fh)
    dt = np.dtype(dtype)
    raw = _read_exact(fh, count * dt.itemsize)
    return np.frombuffer(raw, dtype=dt).copy()


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(data)}")
    return data
