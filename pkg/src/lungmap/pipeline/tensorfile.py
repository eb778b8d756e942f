"""Self-describing binary tensor container.

Layout (all integers little-endian)::

    b"PWT1" | u8 dtype code | u8 ndim | u64 dims[ndim] | u64 meta_len | meta (UTF-8 JSON) | payload

Dtype codes: 1 = f32le, 2 = f64le, 3 = u8.  The payload is row-major.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

from ..errors import BadTensorHeader

MAGIC = b"PWT1"
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
CODES = {v: k for k, v in DTYPES.items()}


def encode(array, meta=None) -> bytes:
    a = np.asarray(array)
    dt = a.dtype.newbyteorder("<") if a.dtype.kind == "f" else a.dtype
    if dt not in CODES:
        raise TypeError(f"unsupported dtype {a.dtype}; use float32, float64 or uint8")
    a = np.asarray(a, dtype=dt, order="C")  # keeps 0-d arrays 0-d
    blob = json.dumps(meta or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    head = MAGIC + struct.pack("<BB", CODES[dt], a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + struct.pack("<Q", len(blob)) + blob + a.tobytes(order="C")


def decode(raw: bytes):
    """Return ``(array, meta)``; raises :class:`BadTensorHeader` on malformed input."""
    if len(raw) < 6 or raw[:4] != MAGIC:
        raise BadTensorHeader("bad-tensor-header: missing PWT1 magic")
    code, ndim = struct.unpack_from("<BB", raw, 4)
    if code not in DTYPES:
        raise BadTensorHeader(f"bad-tensor-header: unknown dtype code {code}")
    pos = 6
    if len(raw) < pos + 8 * ndim + 8:
        raise BadTensorHeader("bad-tensor-header: truncated header")
    dims = struct.unpack_from(f"<{ndim}Q", raw, pos)
    pos += 8 * ndim
    (mlen,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    if len(raw) < pos + mlen:
        raise BadTensorHeader("bad-tensor-header: truncated metadata")
    try:
        meta = json.loads(raw[pos:pos + mlen].decode("utf-8")) if mlen else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadTensorHeader(f"bad-tensor-header: metadata is not JSON ({exc})") from None
    pos += mlen
    dt = DTYPES[code]
    n = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    if len(raw) - pos != n * dt.itemsize:
        raise BadTensorHeader(
            f"bad-tensor-header: payload holds {len(raw) - pos} bytes, header implies {n * dt.itemsize}"
        )
    arr = np.frombuffer(raw, dtype=dt, count=n, offset=pos).reshape(dims).copy()
    return arr, meta


def write_tensor(path, array, meta=None):
    """Write atomically (temp file + rename) so interrupted runs leave no partial file."""
    data = encode(array, meta)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_tensor(path):
    with open(path, "rb") as fh:
        return decode(fh.read())


def read_header(path):
    """``(dtype, shape, meta)`` without loading the payload."""
    with open(path, "rb") as fh:
        head = fh.read(6)
        if len(head) < 6 or head[:4] != MAGIC:
            raise BadTensorHeader("bad-tensor-header: missing PWT1 magic")
        code, ndim = struct.unpack("<BB", head[4:])
        if code not in DTYPES:
            raise BadTensorHeader(f"bad-tensor-header: unknown dtype code {code}")
        rest = fh.read(8 * ndim + 8)
        if len(rest) < 8 * ndim + 8:
            raise BadTensorHeader("bad-tensor-header: truncated header")
        dims = struct.unpack(f"<{ndim}Q", rest[:8 * ndim])
        (mlen,) = struct.unpack("<Q", rest[8 * ndim:])
        blob = fh.read(mlen)
    try:
        meta = json.loads(blob.decode("utf-8")) if mlen else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadTensorHeader(f"bad-tensor-header: metadata is not JSON ({exc})") from None
    return DTYPES[code], tuple(dims), meta
