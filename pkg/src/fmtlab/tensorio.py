"""FTNSR1 tensor files.

Layout (little-endian)::

    offset  size      field
    0       6         magic b"FTNSR1"
    6       1         dtype code: 0 = f32, 1 = f16, 2 = bf16
    7       1         ndim
    8       8*ndim    dims, u64 each
    ...               payload, row-major

Reads always return float64 arrays (exact widening).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, TensorIOError
from .precision import PrecisionKind, cast

MAGIC = b"FTNSR1"
DTYPES = {"f32": 0, "f16": 1, "bf16": 2}
_CODES = {v: k for k, v in DTYPES.items()}
_ITEMSIZE = {"f32": 4, "f16": 2, "bf16": 2}


def encode(tensor, dtype: str = "f32") -> bytes:
    if dtype not in DTYPES:
        raise ConfigError(f"unknown dtype {dtype!r}; expected one of {list(DTYPES)}")
    x = np.asarray(tensor, dtype=np.float64)
    if x.ndim > 255:
        raise ConfigError("FTNSR1 supports at most 255 dimensions")
    header = MAGIC + struct.pack("<BB", DTYPES[dtype], x.ndim) + struct.pack(f"<{x.ndim}Q", *x.shape)
    flat = np.ascontiguousarray(x).ravel()
    if dtype == "f32":
        payload = flat.astype("<f4").tobytes()
    elif dtype == "f16":
        payload = flat.astype("<f2").tobytes()
    else:
        bits = cast(flat, PrecisionKind.BF16).astype("<f4").view("<u4")
        payload = (bits >> 16).astype("<u2").tobytes()
    return header + payload


def decode(buf: bytes, dtype: str | None = None) -> np.ndarray:
    if len(buf) < len(MAGIC) or buf[: len(MAGIC)] != MAGIC:
        raise TensorIOError(f"bad magic {bytes(buf[:6])!r}, expected {MAGIC!r}", 0)
    if len(buf) < 8:
        raise TensorIOError("truncated header", len(buf))
    code, ndim = buf[6], buf[7]
    if code not in _CODES:
        raise TensorIOError(f"unknown dtype code {code}", 6)
    name = _CODES[code]
    if dtype is not None and dtype != name:
        raise TensorIOError(f"dtype mismatch: file holds {name}, expected {dtype}", 6)
    dims_end = 8 + 8 * ndim
    if len(buf) < dims_end:
        raise TensorIOError(f"truncated dims: need {dims_end} header bytes, have {len(buf)}", len(buf))
    shape = struct.unpack_from(f"<{ndim}Q", buf, 8)
    count = int(np.prod(shape, dtype=np.uint64)) if ndim else 1
    need = count * _ITEMSIZE[name]
    have = len(buf) - dims_end
    if have < need:
        raise TensorIOError(f"truncated payload: expected {need} bytes, found {have}", dims_end + have)
    if have > need:
        raise TensorIOError(f"{have - need} trailing bytes after payload", dims_end + need)
    raw = memoryview(buf)[dims_end:]
    if name == "f32":
        data = np.frombuffer(raw, dtype="<f4", count=count)
    elif name == "f16":
        data = np.frombuffer(raw, dtype="<f2", count=count)
    else:
        bits = np.frombuffer(raw, dtype="<u2", count=count).astype("<u4") << 16
        data = bits.view("<f4")
    return data.astype(np.float64).reshape(shape)


def write_tensor(tensor, path, dtype: str = "f32") -> None:
    """Write ``tensor`` rounding to ``dtype`` with nearest-even."""
    Path(path).write_bytes(encode(tensor, dtype))


def read_tensor(path, dtype: str | None = None) -> np.ndarray:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise TensorIOError(f"cannot read {path}: {exc.strerror}") from exc
    return decode(buf, dtype)


def read_dtype(path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head[:6] != MAGIC or len(head) < 8 or head[6] not in _CODES:
        raise TensorIOError("not an FTNSR1 file", 0)
    return _CODES[head[6]]
