"""``.tnsr`` binary tensor files.

Layout, little-endian::

    b"TNSR" | version u8 (=1) | dtype u8 (0 float32, 1 uint8) | ndim u8 | ndim x u32 dims | payload

Payload is row-major. Arrays are plain numpy arrays throughout the package.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR"
VERSION = 1
DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.uint8): 1}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


class TensorFormatError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype not in DTYPE_CODES:
        raise TypeError(f"unsupported dtype {arr.dtype}; expected float32 or uint8")
    if arr.ndim > 255:
        raise ValueError("too many dimensions")
    header = MAGIC + struct.pack("<BBB", VERSION, DTYPE_CODES[arr.dtype], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 7:
        raise TensorFormatError("header", "truncated header")
    if buf[:4] != MAGIC:
        raise TensorFormatError("magic", f"bad magic {buf[:4]!r}")
    version, code, ndim = struct.unpack_from("<BBB", buf, 4)
    if version != VERSION:
        raise TensorFormatError("version", f"unsupported version {version}")
    if code not in CODE_DTYPES:
        raise TensorFormatError("dtype", f"unknown dtype code {code}")
    dims_end = 7 + 4 * ndim
    if len(buf) < dims_end:
        raise TensorFormatError("dims", "truncated dimension list")
    shape = struct.unpack_from(f"<{ndim}I", buf, 7)
    dtype = CODE_DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = buf[dims_end:]
    if len(payload) != expected:
        raise TensorFormatError("payload", f"expected {expected} bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)


def write_tensor(arr, path) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
