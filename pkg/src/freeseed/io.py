"""Flat binary array container and key=value text persistence.

Arrays are stored as little-endian raw buffers behind a fixed 64-byte
header so files can be read back without pickle:

    bytes  0-3    magic  b"FSCT"
    bytes  4-7    format version (uint32, currently 1)
    bytes  8-11   dtype code (uint32): 0 = float32, 1 = float64, 2 = uint8
    bytes 12-15   ndim (uint32, at most 6)
    bytes 16-63   dims (6 x uint64, unused entries zero)

Several arrays may be concatenated in one file; readers consume records
sequentially.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FSCT"
VERSION = 1
HEADER_SIZE = 64
_HEADER_FMT = "<4sIII6Q"

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint8): 2}


class ContainerError(ValueError):
    """Raised on malformed container files."""


def _pack_header(arr: np.ndarray) -> bytes:
    code = _DTYPE_TO_CODE.get(arr.dtype)
    if code is None:
        raise ContainerError(f"unsupported dtype {arr.dtype}; use float32, float64 or uint8")
    if arr.ndim > 6:
        raise ContainerError(f"ndim {arr.ndim} exceeds the 6-dimension limit")
    dims = list(arr.shape) + [0] * (6 - arr.ndim)
    return struct.pack(_HEADER_FMT, MAGIC, VERSION, code, arr.ndim, *dims)


def write_array(fh, arr: np.ndarray) -> None:
    """Append one array record to an open binary file handle."""
    arr = np.ascontiguousarray(arr)
    fh.write(_pack_header(arr))
    fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_array(fh) -> np.ndarray:
    """Read the next array record; raises ContainerError on corruption."""
    header = fh.read(HEADER_SIZE)
    if len(header) != HEADER_SIZE:
        raise ContainerError("truncated header")
    magic, version, code, ndim, *dims = struct.unpack(_HEADER_FMT, header)
    if magic != MAGIC:
        raise ContainerError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    if code not in _DTYPE_CODES:
        raise ContainerError(f"unknown dtype code {code}")
    if ndim > 6:
        raise ContainerError(f"invalid ndim {ndim}")
    shape = tuple(dims[:ndim])
    dtype = _DTYPE_CODES[code]
    n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
    buf = fh.read(n_bytes)
    if len(buf) != n_bytes:
        raise ContainerError("truncated payload")
    return np.frombuffer(buf, dtype=dtype).reshape(shape).copy()


def save_arrays(path, arrays) -> None:
    """Write a sequence of arrays to one container file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        for arr in arrays:
            write_array(fh, arr)


def load_arrays(path, count: int | None = None) -> list[np.ndarray]:
    """Read all (or the first ``count``) array records from a container file."""
    out: list[np.ndarray] = []
    with open(path, "rb") as fh:
        while count is None or len(out) < count:
            if count is None and len(fh.peek(1)) == 0:
                break
            out.append(read_array(fh))
    return out


def write_keyvalues(path, mapping: dict) -> None:
    """Persist a flat mapping as sorted ``key = value`` lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {mapping[k]}\n" for k in mapping]
    with open(path, "w", encoding="ascii") as fh:
        fh.writelines(lines)


def read_keyvalues(path) -> dict[str, str]:
    """Parse a ``key = value`` text file; blank lines and # comments skipped."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key in out:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out
