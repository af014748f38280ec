"""Binary container for trained models.

Layout (all integers little-endian)::

    magic      4 bytes   b"PJLM"
    version    u16       currently 1
    kind_len   u16       length of the kind tag
    kind       ascii
    meta_len   u32       length of the JSON metadata blob
    meta       utf-8 JSON (sorted keys)
    n_arrays   u32
    repeated n_arrays times:
        name_len u16, name ascii
        ndim     u8,  dims u32 * ndim
        data     float64 little-endian, C order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PJLM"
VERSION = 1


class ContainerError(ValueError):
    pass


def dumps(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    out = bytearray(MAGIC)
    kind_b = kind.encode("ascii")
    meta_b = json.dumps(meta, sort_keys=True).encode("utf-8")
    out += struct.pack("<HH", VERSION, len(kind_b)) + kind_b
    out += struct.pack("<I", len(meta_b)) + meta_b
    out += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8", order="C")
        name_b = name.encode("ascii")
        out += struct.pack("<H", len(name_b)) + name_b
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    return bytes(out)


def loads(buf: bytes, expect_kind: str | None = None) -> tuple[str, dict, dict[str, np.ndarray]]:
    view = memoryview(buf)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise ContainerError("truncated model file")
        chunk = view[pos : pos + n]
        pos += n
        return bytes(chunk)

    if take(4) != MAGIC:
        raise ContainerError("not a model container (bad magic)")
    version, kind_len = struct.unpack("<HH", take(4))
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    kind = take(kind_len).decode("ascii")
    if expect_kind is not None and kind != expect_kind:
        raise ContainerError(f"expected a {expect_kind!r} model, found {kind!r}")
    (meta_len,) = struct.unpack("<I", take(4))
    meta = json.loads(take(meta_len).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("ascii")
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(dims)) if ndim else 1
        arrays[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims).astype(np.float64)
    if pos != len(view):
        raise ContainerError("trailing bytes after model data")
    return kind, meta, arrays


def save(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(kind, meta, arrays))


def load(path, expect_kind: str | None = None):
    return loads(Path(path).read_bytes(), expect_kind)
