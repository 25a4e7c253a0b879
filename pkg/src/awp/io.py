"""File formats.

AWPT tensor container (little-endian)::

    b"AWPT" | u32 version (=1) | u8 dtype | u8 ndim | u64 size * ndim | payload

dtype 0 = float32, 1 = float64, 2 = bitmask.  Bitmasks are packed row-major,
eight entries per byte, first entry in the least significant bit.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .projections import QuantGrid

__all__ = ["FormatError", "save_awpt", "load_awpt", "save_grid", "load_grid", "write_json"]

MAGIC = b"AWPT"
VERSION = 1
DTYPE_F32, DTYPE_F64, DTYPE_MASK = 0, 1, 2
_FLOAT_CODES = {DTYPE_F32: np.dtype("<f4"), DTYPE_F64: np.dtype("<f8")}


class FormatError(ValueError):
    pass


def encode_awpt(a: np.ndarray) -> bytes:
    a = np.asarray(a)
    if a.dtype == np.bool_:
        code = DTYPE_MASK
        payload = np.packbits(a.ravel(), bitorder="little").tobytes()
    elif a.dtype == np.float32:
        code = DTYPE_F32
        payload = np.ascontiguousarray(a, dtype="<f4").tobytes()
    elif a.dtype == np.float64:
        code = DTYPE_F64
        payload = np.ascontiguousarray(a, dtype="<f8").tobytes()
    else:
        raise FormatError(f"cannot store dtype {a.dtype} in AWPT")
    if a.ndim > 255:
        raise FormatError("too many dimensions")
    header = MAGIC + struct.pack("<IBB", VERSION, code, a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return header + payload


def decode_awpt(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise FormatError("not an AWPT file (bad magic)")
    if len(buf) < 10:
        raise FormatError("truncated AWPT header")
    version, code, ndim = struct.unpack_from("<IBB", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported AWPT version {version}")
    if code not in (DTYPE_F32, DTYPE_F64, DTYPE_MASK):
        raise FormatError(f"unknown AWPT dtype code {code}")
    off = 10 + 8 * ndim
    if len(buf) < off:
        raise FormatError("truncated AWPT header")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 10)
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    if code == DTYPE_MASK:
        nbytes = -(-count // 8)
        if len(buf) - off != nbytes:
            raise FormatError(f"mask payload is {len(buf) - off} bytes, expected {nbytes}")
        bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8, offset=off), count=count, bitorder="little")
        return bits.astype(bool).reshape(shape)
    dt = _FLOAT_CODES[code]
    if len(buf) - off != count * dt.itemsize:
        raise FormatError(f"payload is {len(buf) - off} bytes, expected {count * dt.itemsize}")
    a = np.frombuffer(buf, dtype=dt, offset=off).reshape(shape).astype(dt.newbyteorder("="))
    if not np.all(np.isfinite(a)):
        raise FormatError("tensor contains non-finite values")
    return a


def save_awpt(path, a: np.ndarray) -> None:
    Path(path).write_bytes(encode_awpt(a))


def load_awpt(path) -> np.ndarray:
    return decode_awpt(Path(path).read_bytes())


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_grid(path, grid: QuantGrid) -> None:
    write_json(path, grid.to_json())


def load_grid(path) -> QuantGrid:
    return QuantGrid.from_json(json.loads(Path(path).read_text()))
