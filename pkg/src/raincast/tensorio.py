"""Dense arrays, rain cubes and the ``NWC1`` binary tensor format.

File layout: magic ``b"NWC1"``, one byte rank ``r``, ``r`` little-endian
uint32 dims, then ``prod(dims)`` little-endian float32 values in row-major
order. Arrays are float64 in memory; anything written must be representable
as float32 for the round trip to be bit-exact.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"NWC1"
MAX_RANK = 4


class TensorFormatError(ValueError):
    """Base class for malformed tensor files."""


class BadMagicError(TensorFormatError):
    pass


class TruncatedError(TensorFormatError):
    pass


class LengthMismatchError(TensorFormatError):
    pass


def _check_dims(shape):
    if len(shape) == 0:
        raise ValueError("tensor must have at least one dimension")
    if len(shape) > MAX_RANK:
        raise ValueError(f"tensor rank {len(shape)} exceeds {MAX_RANK}")
    if any(d <= 0 for d in shape):
        raise ValueError(f"dims must be positive, got {tuple(shape)}")


def encode_tensor(t) -> bytes:
    arr = np.asarray(t, dtype=np.float64)
    _check_dims(arr.shape)
    header = MAGIC + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 5:
        raise TruncatedError("file shorter than tensor header")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    rank = buf[4]
    if rank == 0 or rank > MAX_RANK:
        raise TensorFormatError(f"unsupported rank {rank}")
    start = 5 + 4 * rank
    if len(buf) < start:
        raise TruncatedError("header truncated inside dims")
    dims = struct.unpack(f"<{rank}I", buf[5:start])
    if any(d == 0 for d in dims):
        raise TensorFormatError(f"zero dimension in header {dims}")
    payload = len(buf) - start
    if payload % 4:
        raise TruncatedError(f"payload of {payload} bytes is not a whole number of float32 values")
    n = int(np.prod(dims))
    if payload // 4 != n:
        raise LengthMismatchError(f"header declares {dims} ({n} values), payload holds {payload // 4}")
    data = np.frombuffer(buf, dtype="<f4", offset=start, count=n)
    return data.astype(np.float64).reshape(dims)


def write_tensor(t, path) -> None:
    """Write ``t`` to ``path``; equal arrays give byte-identical files."""
    data = encode_tensor(t)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


def write_mask(mask, path) -> None:
    write_tensor(np.asarray(mask, dtype=bool).astype(np.float64), path)


def read_mask(path) -> np.ndarray:
    m = read_tensor(path)
    if not np.all((m == 0.0) | (m == 1.0)):
        raise TensorFormatError("mask values must be exactly 0.0 or 1.0")
    return m == 1.0


@dataclass(frozen=True)
class RainCube:
    """Rain rates (mm/hr) on a T x H x W grid plus a validity mask.

    Invalid cells are flagged in ``valid`` only; ``rate`` never carries
    sentinels.
    """

    rate: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        rate = np.asarray(self.rate, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if rate.ndim != 3:
            raise ValueError(f"rain cube must be T x H x W, got shape {rate.shape}")
        if valid.shape != rate.shape:
            raise ValueError("mask shape does not match rate shape")
        if not np.all(np.isfinite(rate[valid])):
            raise ValueError("valid rates must be finite")
        if np.any(rate[valid] < 0):
            raise ValueError("valid rates must be non-negative")
        rate.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "rate", rate)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def all_valid(cls, rate) -> RainCube:
        rate = np.asarray(rate, dtype=np.float64)
        return cls(rate, np.ones(rate.shape, dtype=bool))

    @property
    def shape(self):
        return self.rate.shape


def write_json(obj, path) -> None:
    """Deterministic JSON (sorted keys, LF, trailing newline)."""
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))
