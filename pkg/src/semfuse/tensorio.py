"""Binary tensor file format used for fixtures and checkpoints.

Layout, all little-endian: magic bytes ``D2CT``, u32 rank, u64 dims[rank],
then the float64 payload in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"D2CT"


def write_tensor(path, array) -> None:
    arr = np.ascontiguousarray(array, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: missing tensor magic bytes")
    (rank,) = struct.unpack_from("<I", blob, 4)
    header_end = 8 + 8 * rank
    if len(blob) < header_end:
        raise FormatError(f"{path}: truncated dimension header")
    dims = struct.unpack_from(f"<{rank}Q", blob, 8)
    count = 1
    for d in dims:
        count *= d
    if len(blob) != header_end + 8 * count:
        raise FormatError(f"{path}: payload size does not match dims {dims}")
    data = np.frombuffer(blob, dtype="<f8", offset=header_end, count=count)
    return data.astype(np.float64).reshape(dims)
