"""WVT1 binary tensor files.

Layout: bytes 0-3 ASCII ``WVT1``; byte 4 dtype code (0=float32, 1=float64,
2=uint8); byte 5 ndim; bytes 6-7 zero padding; ``ndim`` little-endian uint32
extents; raw row-major little-endian payload.  Roundtrips are bit-exact.
"""

from __future__ import annotations

import os

import numpy as np

MAGIC = b"WVT1"

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_CODE_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint8): 2}


class TensorFileError(ValueError):
    """Base class for malformed WVT1 files."""


class BadMagicError(TensorFileError):
    pass


class BadDtypeError(TensorFileError):
    pass


class TruncatedFileError(TensorFileError):
    pass


def write_tensor(arr: np.ndarray, path) -> None:
    """Write ``arr`` (float32/float64/uint8) to ``path`` in WVT1 format."""
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _CODE_OF:
        raise BadDtypeError(f"unsupported dtype {arr.dtype}; use float32/float64/uint8")
    header = bytearray(MAGIC)
    header.append(_CODE_OF[arr.dtype])
    header.append(arr.ndim)
    header += b"\x00\x00"
    header += np.asarray(arr.shape, dtype="<u4").tobytes()
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(bytes(header))
        fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())
    os.replace(tmp, path)


def read_tensor(path) -> np.ndarray:
    """Read a WVT1 file; raises a specific TensorFileError subtype on damage."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise TruncatedFileError(f"{path}: shorter than the 8-byte header")
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {blob[:4]!r}")
    code, ndim = blob[4], blob[5]
    if code not in _DTYPE_CODES:
        raise BadDtypeError(f"{path}: unknown dtype code {code}")
    dtype = _DTYPE_CODES[code]
    dims_end = 8 + 4 * ndim
    if len(blob) < dims_end:
        raise TruncatedFileError(f"{path}: truncated extents")
    shape = tuple(int(d) for d in np.frombuffer(blob[8:dims_end], dtype="<u4"))
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    expected = dims_end + count * dtype.itemsize
    if len(blob) < expected:
        raise TruncatedFileError(
            f"{path}: payload has {len(blob) - dims_end} bytes, expected {count * dtype.itemsize}"
        )
    arr = np.frombuffer(blob[dims_end:expected], dtype=dtype).reshape(shape)
    return arr.astype(arr.dtype.newbyteorder("="), copy=True)
