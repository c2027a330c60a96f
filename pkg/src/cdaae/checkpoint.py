"""Checkpoint container.

Layout (all integers little-endian)::

    magic       8 bytes   b"CDAAECK1"
    version     uint32    1
    meta_len    uint32    length of the JSON metadata block
    meta        meta_len bytes of UTF-8 JSON (run metadata, optimizer step counts, RNG state)
    count       uint32    number of tensor records
    records     count x {
                    name_len uint16, name (UTF-8),
                    ndim     uint8,  dims (ndim x uint32),
                    payload  prod(dims) x float32 (little-endian, C order)
                }

Tensor names are prefixed ``param/``, ``buffer/`` or ``optim/<group>/``.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"CDAAECK1"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: os.PathLike | str, tensors: dict[str, np.ndarray], meta: dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise CheckpointError(f"tensor {name} has dtype {arr.dtype}; checkpoints store float32 only")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.astype("<f4", copy=False).tobytes(order="C"))
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(b"".join(parts))
    os.replace(tmp, path)
    return path


def load_checkpoint(path: os.PathLike | str) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = 8

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise CheckpointError(f"{path}: truncated at byte offset {pos}")
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, meta_len = take("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(buf[pos : pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = take("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = take("<H")
        name = buf[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = take("<B")
        dims = take(f"<{ndim}I") if ndim else ()
        n = int(np.prod(dims, dtype=np.int64))
        if pos + 4 * n > len(buf):
            raise CheckpointError(f"{path}: tensor {name} truncated at byte offset {pos}")
        tensors[name] = np.frombuffer(buf, dtype="<f4", count=n, offset=pos).astype(np.float32).reshape(dims)
        pos += 4 * n
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return tensors, meta
