"""Binary checkpoint format: magic, version, JSON metadata, named tensors.

Layout (all integers little-endian):
    magic      5 bytes  b"RMBK1"
    version    u32      currently 1
    meta_len   u32      followed by UTF-8 JSON metadata
    count      u32      number of tensors, then per tensor:
        name_len u16, name bytes, dtype u8 (0=f64, 1=f32),
        ndim u8, ndim*u32 extents, row-major little-endian payload
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"RMBK1"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_DTYPE_TAGS = {np.dtype("float64"): 0, np.dtype("float32"): 1}


class CheckpointError(ValueError):
    pass


def save(path, tensors: dict[str, np.ndarray], metadata: dict | None = None):
    """Write atomically (temp file + rename); order of `tensors` is preserved."""
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<I", len(meta)) + meta
    blob += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_TAGS:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        nb = name.encode()
        blob += struct.pack("<H", len(nb)) + nb
        blob += struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype(arr.dtype.newbyteorder("<")).tobytes()
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(bytes(blob))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:5] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes {raw[:5]!r}")
    off = 5
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (meta_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    metadata = json.loads(raw[off:off + meta_len].decode())
    off += meta_len
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + name_len].decode()
        off += name_len
        dtype_tag, ndim = struct.unpack_from("<BB", raw, off)
        off += 2
        if dtype_tag not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype tag {dtype_tag} for {name!r}")
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        dt = _DTYPES[dtype_tag]
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype=dt, count=n, offset=off).reshape(shape)
        off += n * dt.itemsize
        tensors[name] = arr.astype(arr.dtype.newbyteorder("="))
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return metadata, tensors
