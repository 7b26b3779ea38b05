"""Flat binary container of named float64 arrays, plus a text manifest.

Layout (little-endian): magic ``LASCKPT1``, uint32 array count, then per
array a uint16 name length, the UTF-8 name, a uint8 rank, uint32 dims and
the float64 payload in C order.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..errors import IntegrityError

MAGIC = b"LASCKPT1"


def encode_arrays(arrays: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(arrays))]
    for name, value in arrays.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_arrays(data: bytes) -> "OrderedDict[str, np.ndarray]":
    if not data.startswith(MAGIC):
        raise IntegrityError("not a checkpoint (bad magic)")
    pos = len(MAGIC)
    try:
        (count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        out = OrderedDict()
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + n].decode("utf-8")
            pos += n
            (ndim,) = struct.unpack_from("<B", data, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise IntegrityError(f"truncated or corrupt checkpoint: {exc}") from exc
    if pos != len(data):
        raise IntegrityError("trailing bytes after the last array")
    return out


def manifest_text(arrays: dict) -> str:
    return "".join(f"{name}\t{','.join(str(d) for d in np.shape(v))}\n" for name, v in arrays.items())


def save_checkpoint(path, arrays: dict) -> tuple[Path, Path]:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_arrays(arrays))
    manifest = path.with_suffix(path.suffix + ".manifest")
    manifest.write_text(manifest_text(arrays), encoding="utf-8")
    return path, manifest


def load_checkpoint(path, check_manifest: bool = True) -> "OrderedDict[str, np.ndarray]":
    path = Path(path)
    arrays = decode_arrays(path.read_bytes())
    manifest = path.with_suffix(path.suffix + ".manifest")
    if check_manifest and manifest.exists():
        if manifest.read_text(encoding="utf-8") != manifest_text(arrays):
            raise IntegrityError(f"{path}: contents do not match {manifest.name}")
    return arrays
