"""Reader/writer for the TNS1 tensor file format.

Layout: one ASCII header line ``TNS1 <dtype> <ndim> <d0> <d1> ...\\n``
followed by the row-major little-endian scalars. Complex arrays are stored
as real arrays with a trailing extent of 2 (real, imag interleaved per
element).
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = "TNS1"

_DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "u8": np.dtype("u1"),
    "i64": np.dtype("<i8"),
}
_NAMES = {v.newbyteorder("="): k for k, v in _DTYPES.items()}


def _dtype_name(dtype: np.dtype) -> str:
    key = np.dtype(dtype).newbyteorder("=")
    if key == np.dtype(bool):
        return "u8"
    try:
        return _NAMES[key]
    except KeyError:
        raise TypeError(f"TNS1 cannot store dtype {dtype}") from None


def encode(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if np.iscomplexobj(arr):
        real = np.float32 if arr.dtype == np.complex64 else np.float64
        arr = np.stack([arr.real, arr.imag], axis=-1).astype(real)
    name = _dtype_name(arr.dtype)
    header = " ".join([MAGIC, name, str(arr.ndim), *(str(n) for n in arr.shape)])
    body = np.ascontiguousarray(arr, dtype=_DTYPES[name]).tobytes()
    return header.encode("ascii") + b"\n" + body


def decode(buf: bytes) -> np.ndarray:
    nl = buf.find(b"\n")
    if nl < 0:
        raise CheckpointError("TNS1: missing header line")
    parts = buf[:nl].decode("ascii").split()
    if len(parts) < 3 or parts[0] != MAGIC:
        raise CheckpointError(f"TNS1: bad header {buf[:nl]!r}")
    name, ndim = parts[1], int(parts[2])
    if name not in _DTYPES or len(parts) != 3 + ndim:
        raise CheckpointError(f"TNS1: bad header {buf[:nl]!r}")
    shape = tuple(int(n) for n in parts[3:])
    dtype = _DTYPES[name]
    count = int(np.prod(shape, dtype=np.int64))
    body = buf[nl + 1 :]
    if len(body) != count * dtype.itemsize:
        raise CheckpointError(
            f"TNS1: expected {count * dtype.itemsize} data bytes, found {len(body)}"
        )
    return np.frombuffer(body, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def save(path: str | os.PathLike, array: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(array))


def load(path: str | os.PathLike) -> np.ndarray:
    try:
        return decode(Path(path).read_bytes())
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc


def load_complex(path: str | os.PathLike) -> np.ndarray:
    arr = load(path)
    if arr.shape[-1:] != (2,):
        raise CheckpointError(f"{path}: not a complex tensor (trailing extent != 2)")
    return arr[..., 0] + 1j * arr[..., 1]
