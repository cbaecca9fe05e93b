"""Flat binary checkpoint container.

Layout (little-endian)::

    magic  b"SDFN"
    u8     version (1)
    u32    record count
    record*:
        u32 name length, UTF-8 name
        u8  dtype code (0 = f32, 1 = f64)
        u32 ndim, u64 * ndim shape
        row-major payload
    u32    metadata length, UTF-8 JSON (sorted keys)

Loading then saving reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .exceptions import ValidationError

MAGIC = b"SDFN"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def dumps(tensors: "OrderedDict[str, np.ndarray] | dict", meta: dict | None = None) -> bytes:
    parts = [MAGIC, struct.pack("<BI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        code = _CODES[arr.dtype]
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<BI{arr.ndim}Q", code, arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    blob = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<I", len(blob)) + blob)
    return b"".join(parts)


def loads(buf: bytes) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    if buf[:4] != MAGIC:
        raise ValidationError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<BI", buf, 4)
    if version != VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    off = 9
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + n].decode("utf-8")
            off += n
            code, ndim = struct.unpack_from("<BI", buf, off)
            off += 5
            shape = struct.unpack_from(f"<{ndim}Q", buf, off)
            off += 8 * ndim
            dt = _DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if name in out:
                raise ValidationError(f"duplicate tensor name {name!r}")
            out[name] = np.frombuffer(buf, dtype=dt, count=size // dt.itemsize, offset=off).reshape(shape).copy()
            off += size
        (n,) = struct.unpack_from("<I", buf, off)
        meta = json.loads(buf[off + 4:off + 4 + n].decode("utf-8"))
    except (struct.error, KeyError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"corrupt checkpoint: {exc}") from None
    return out, meta


def save(path, tensors, meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, meta))


def load(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    return loads(Path(path).read_bytes())
