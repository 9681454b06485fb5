"""Binary file formats: HIFT raw tensors and named-tensor checkpoints.

HIFT layout (all integers little-endian):
    magic "HIFT" | u32 version=1 | u32 rank | rank x u64 extents |
    u8 dtype (0=f32, 1=f64) | payload

A checkpoint is a plain concatenation of (u32 name length, utf-8 name,
HIFT record) entries, read until EOF.  Both round-trip bit-exactly.
"""

from __future__ import annotations

import struct
from typing import Iterable

import numpy as np

from .errors import FormatError

_MAGIC = b"HIFT"
_VERSION = 1
_DTYPE_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def hift_bytes(arr: np.ndarray) -> bytes:
    """Serialize an array to HIFT bytes."""
    arr = np.asarray(arr)
    if arr.ndim and not arr.flags.c_contiguous:
        # ascontiguousarray unconditionally would promote rank 0 to rank 1
        arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DTYPE_CODE:
        raise FormatError(f"HIFT stores f32/f64 only, got {arr.dtype}")
    header = _MAGIC + struct.pack("<II", _VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    header += struct.pack("<B", _DTYPE_CODE[arr.dtype])
    payload = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    return header + payload


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated HIFT stream while reading {what}")
    return buf


def read_hift(f) -> np.ndarray:
    """Read one HIFT record from a binary file object."""
    if _read_exact(f, 4, "magic") != _MAGIC:
        raise FormatError("bad magic; not a HIFT stream")
    version, rank = struct.unpack("<II", _read_exact(f, 8, "header"))
    if version != _VERSION:
        raise FormatError(f"unsupported HIFT version {version}")
    shape = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank, "extents"))
    (code,) = struct.unpack("<B", _read_exact(f, 1, "dtype"))
    if code not in _CODE_DTYPE:
        raise FormatError(f"unknown dtype code {code}")
    dt = _CODE_DTYPE[code]
    count = 1
    for e in shape:
        count *= e
    payload = _read_exact(f, count * dt.itemsize, "payload")
    arr = np.frombuffer(payload, dtype=dt).reshape(shape)
    return arr.astype(arr.dtype.newbyteorder("="))


def save_hift(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(hift_bytes(arr))


def load_hift(path) -> np.ndarray:
    with open(path, "rb") as f:
        arr = read_hift(f)
        if f.read(1):
            raise FormatError("trailing bytes after HIFT record")
    return arr


def save_checkpoint(path, named: Iterable[tuple[str, np.ndarray]]) -> None:
    """Write a (name, tensor) archive; iteration order is preserved."""
    with open(path, "wb") as f:
        for name, arr in named:
            blob = name.encode("utf-8")
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            f.write(hift_bytes(arr))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint archive into an ordered name -> array mapping."""
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise FormatError("truncated checkpoint entry header")
            (n,) = struct.unpack("<I", head)
            name = _read_exact(f, n, "entry name").decode("utf-8")
            if name in out:
                raise FormatError(f"duplicate checkpoint entry {name!r}")
            out[name] = read_hift(f)
    return out
