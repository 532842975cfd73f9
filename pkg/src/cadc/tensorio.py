"""Binary tensor files and weight archives.

Layout (little-endian, no alignment padding)::

    b"CADC" | u8 version (=1) | u8 dtype (0=f64, 1=i32) | u8 rank | u64 dims[rank] | payload

A weight archive is a directory holding one ``<tensor name>.cadc`` file per
tensor.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"CADC"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i4")}
_CODES = {np.dtype("float64"): 0, np.dtype("int32"): 1}
SUFFIX = ".cadc"


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        arr = arr.astype(np.float64)
    elif arr.dtype.kind in "iub":
        if arr.size and (arr.min() < -(1 << 31) or arr.max() >= 1 << 31):
            raise FormatError("integer tensor does not fit int32")
        arr = arr.astype(np.int32)
    else:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    code = _CODES[arr.dtype]
    if arr.ndim > 255:
        raise FormatError("rank exceeds 255")
    head = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.astype(_DTYPES[code], copy=False).tobytes(order="C")


def decode_tensor(data: bytes) -> np.ndarray:
    if len(data) < 7 or data[:4] != MAGIC:
        raise FormatError("missing CADC magic")
    version, code, rank = struct.unpack_from("<BBB", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    off = 7 + 8 * rank
    if len(data) < off:
        raise FormatError("truncated dims")
    dims = struct.unpack_from(f"<{rank}Q", data, 7)
    dtype = _DTYPES[code]
    n = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(data) != off + n * dtype.itemsize:
        raise FormatError(f"payload is {len(data) - off} bytes, expected {n * dtype.itemsize}")
    arr = np.frombuffer(data, dtype=dtype, count=n, offset=off).reshape(dims)
    return arr.astype(np.float64 if code == 0 else np.int32)


def write_tensor(path: "str | Path", arr: np.ndarray) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path: "str | Path") -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def save_weights(directory: "str | Path", weights: dict) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in sorted(weights):
        write_tensor(d / f"{name}{SUFFIX}", weights[name])


def load_weights(directory: "str | Path") -> dict:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"weight archive {d} not found")
    return {p.name[: -len(SUFFIX)]: read_tensor(p) for p in sorted(d.glob(f"*{SUFFIX}"))}
