"""Binary containers: CYMT (one tensor) and CYMW (named weight checkpoint).

All integers and payloads are little-endian.

CYMT::

    b"CYMT" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u8 ndim=4 | 4 x u32 extents | payload

CYMW::

    b"CYMW" | u8 version=1 | u32 count |
    count x ( u16 name_len | utf-8 name | u8 dtype | u8 ndim | ndim x u32 extents | payload )
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import FormatError

CYMT_MAGIC = b"CYMT"
CYMW_MAGIC = b"CYMW"
VERSION = 1

_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def _dtype_code(arr: np.ndarray) -> int:
    try:
        return _CODES[arr.dtype]
    except KeyError:
        raise FormatError(f"unsupported dtype {arr.dtype}") from None


def _read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(data)}")
    return data


def _write_array(f: BinaryIO, arr: np.ndarray, code: int) -> None:
    for d in arr.shape:
        f.write(struct.pack("<I", d))
    f.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def _read_array(f: BinaryIO, code: int, ndim: int) -> np.ndarray:
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dims = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
    dt = _DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64))
    data = _read_exact(f, count * dt.itemsize)
    return np.frombuffer(data, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))


def write_cymt(path, x: np.ndarray) -> None:
    if x.ndim != 4:
        raise FormatError(f"CYMT holds 4-D tensors, got shape {x.shape}")
    code = _dtype_code(x)
    with open(path, "wb") as f:
        f.write(CYMT_MAGIC)
        f.write(struct.pack("<BBB", VERSION, code, 4))
        _write_array(f, x, code)


def read_cymt(path) -> np.ndarray:
    with open(path, "rb") as f:
        if _read_exact(f, 4) != CYMT_MAGIC:
            raise FormatError(f"{path}: not a CYMT file")
        version, code, ndim = struct.unpack("<BBB", _read_exact(f, 3))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported CYMT version {version}")
        if ndim != 4:
            raise FormatError(f"{path}: CYMT ndim must be 4, got {ndim}")
        x = _read_array(f, code, ndim)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return x


def dump_cymw(tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(CYMW_MAGIC)
    buf.write(struct.pack("<BI", VERSION, len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        code = _dtype_code(arr)
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<BB", code, arr.ndim))
        _write_array(buf, arr, code)
    return buf.getvalue()


def load_cymw(data: bytes) -> dict[str, np.ndarray]:
    f = io.BytesIO(data)
    if _read_exact(f, 4) != CYMW_MAGIC:
        raise FormatError("not a CYMW checkpoint")
    version, count = struct.unpack("<BI", _read_exact(f, 5))
    if version != VERSION:
        raise FormatError(f"unsupported CYMW version {version}")
    out = {}
    for _ in range(count):
        (n,) = struct.unpack("<H", _read_exact(f, 2))
        name = _read_exact(f, n).decode("utf-8")
        code, ndim = struct.unpack("<BB", _read_exact(f, 2))
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}")
        out[name] = _read_array(f, code, ndim)
    if f.read(1):
        raise FormatError("trailing bytes after last tensor")
    return out


def write_cymw(path, tensors: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dump_cymw(tensors))


def read_cymw(path) -> dict[str, np.ndarray]:
    return load_cymw(Path(path).read_bytes())
