"""Versioned binary checkpoint container.

Layout (all little-endian):

    magic   8 bytes  b"CSEGCKPT"
    version u32
    epoch   u32
    hash    u16 length + ascii config hash
    count   u32
    entry*  u16 name length + utf-8 name,
            u8 dtype code, u8 ndim, u32 dims...,
            raw payload

Entries preserve insertion order, so save -> load -> save reproduces the
file byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from .errors import CheckpointError

MAGIC = b"CSEGCKPT"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1"), 3: np.dtype("<i8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1,
          np.dtype(np.uint8): 2, np.dtype(np.int64): 3}


@dataclass
class Checkpoint:
    epoch: int = 0
    config_hash: str = ""
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = VERSION


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", ckpt.version, ckpt.epoch))
        hash_bytes = ckpt.config_hash.encode("ascii")
        fh.write(struct.pack("<H", len(hash_bytes)))
        fh.write(hash_bytes)
        fh.write(struct.pack("<I", len(ckpt.tensors)))
        for name, arr in ckpt.tensors.items():
            arr = np.asarray(arr)
            key = np.dtype(arr.dtype.type)
            if key not in _CODES:
                raise CheckpointError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<BB", _CODES[key], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[key]]).tobytes())


def load_checkpoint(path: str) -> Checkpoint:
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CheckpointError(f"cannot open checkpoint {path!r}: {exc}") from exc
    with fh:
        magic = _read_exact(fh, len(MAGIC), "magic")
        if magic != MAGIC:
            raise CheckpointError(f"{path!r} is not a camseg checkpoint (bad magic {magic!r})")
        version, epoch = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != VERSION:
            raise CheckpointError(f"checkpoint format version {version} unsupported (expected {VERSION})")
        (hash_len,) = struct.unpack("<H", _read_exact(fh, 2, "hash length"))
        config_hash = _read_exact(fh, hash_len, "config hash").decode("ascii")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "tensor name length"))
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            code, ndim = struct.unpack("<BB", _read_exact(fh, 2, f"{name} dtype"))
            if code not in _DTYPES:
                raise CheckpointError(f"tensor {name!r} has unknown dtype code {code}")
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, f"{name} shape"))
            dtype = _DTYPES[code]
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
            payload = _read_exact(fh, n_bytes, f"{name} payload")
            tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError(f"trailing bytes after checkpoint payload in {path!r}")
    return Checkpoint(epoch=epoch, config_hash=config_hash, tensors=tensors, version=version)
