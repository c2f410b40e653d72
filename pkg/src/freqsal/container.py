"""Bit-exact binary container for dense tensors.

Layout: magic "FVT1", dtype byte (0 = float32, 1 = float64), ndim byte,
two reserved zero bytes, ndim little-endian u32 extents, then the
row-major little-endian payload. Round-trips are byte-identical.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FVT1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class FormatError(ValueError):
    """Malformed or inconsistent container bytes."""


def tensor_bytes(array: np.ndarray) -> bytes:
    """Serialize a float32/float64 array (other reals are stored as float64)."""
    arr = np.asarray(array)
    if arr.ndim < 1:
        raise FormatError("containers hold tensors of rank >= 1")
    if arr.ndim > 255:
        raise FormatError(f"rank {arr.ndim} exceeds the format limit of 255")
    if any(d < 1 for d in arr.shape):
        raise FormatError(f"all extents must be >= 1, got shape {arr.shape}")
    if any(d > 0xFFFFFFFF for d in arr.shape):
        raise FormatError(f"extent exceeds u32 range in shape {arr.shape}")
    if arr.dtype not in _CODES:
        if arr.dtype.kind not in "fiu":
            raise FormatError(f"cannot serialize dtype {arr.dtype}")
        arr = arr.astype(np.float64)
    code = _CODES[arr.dtype]
    header = MAGIC + struct.pack("<BBxx", code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = arr.astype(_DTYPES[code], copy=False).tobytes(order="C")
    return header + dims + payload


def parse_tensor(blob: bytes) -> np.ndarray:
    """Inverse of tensor_bytes; rejects any malformed framing."""
    if len(blob) < 8:
        raise FormatError(f"container too short ({len(blob)} bytes)")
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    code, ndim = blob[4], blob[5]
    if blob[6:8] != b"\x00\x00":
        raise FormatError("reserved header bytes must be zero")
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if ndim < 1:
        raise FormatError("containers hold tensors of rank >= 1")
    dims_end = 8 + 4 * ndim
    if len(blob) < dims_end:
        raise FormatError("truncated dimension table")
    dims = struct.unpack(f"<{ndim}I", blob[8:dims_end])
    if any(d < 1 for d in dims):
        raise FormatError(f"all extents must be >= 1, got {dims}")
    dtype = _DTYPES[code]
    count = 1
    for d in dims:
        count *= d
    expected = dims_end + count * dtype.itemsize
    if len(blob) != expected:
        raise FormatError(f"payload length {len(blob) - dims_end} does not match dims {dims}")
    data = np.frombuffer(blob, dtype=dtype, offset=dims_end).reshape(dims)
    if not np.all(np.isfinite(data)):
        raise FormatError("container payload contains non-finite values")
    return data.copy()


def write_tensor(path, array: np.ndarray) -> None:
    Path(path).write_bytes(tensor_bytes(array))


def read_tensor(path) -> np.ndarray:
    return parse_tensor(Path(path).read_bytes())
