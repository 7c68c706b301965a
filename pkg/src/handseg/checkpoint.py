"""Little-endian binary container for named tensors.

Layout:

    magic   4 bytes  b"HSEG"
    version 1 byte   (currently 1)
    then, repeated until end of file:
        name_len  uint32
        name      name_len bytes, UTF-8
        extents   4 x uint32  (N, C, H, W)
        data      N*C*H*W float32 values

Entry order is preserved, so identical parameter states serialize to
byte-identical files.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"HSEG"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint file."""


def save_tensors(path, tensors: dict) -> None:
    """Write a name -> array mapping; values may be Tensor or ndarray.

    Arrays are reshaped to 4 extents (missing leading axes become 1) and
    stored as float32.
    """
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        for name, value in tensors.items():
            arr = np.asarray(getattr(value, "data", value), dtype=np.float32)
            if arr.ndim > 4:
                raise CheckpointError(f"{name}: rank {arr.ndim} exceeds 4")
            shape = (1,) * (4 - arr.ndim) + arr.shape
            arr = np.ascontiguousarray(arr.reshape(shape))
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<4I", *shape))
            fh.write(arr.astype("<f4").tobytes())


def load_tensors(path) -> dict:
    """Read a container back as an ordered name -> float32 ndarray mapping."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 5 or blob[4] != VERSION:
        raise CheckpointError(f"{path}: unsupported version")
    out = {}
    pos = 5
    total = len(blob)
    while pos < total:
        if pos + 4 > total:
            raise CheckpointError(f"{path}: truncated record header")
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if pos + name_len + 16 > total:
            raise CheckpointError(f"{path}: truncated record")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        shape = struct.unpack_from("<4I", blob, pos)
        pos += 16
        count = int(np.prod(shape))
        nbytes = count * 4
        if pos + nbytes > total:
            raise CheckpointError(f"{path}: truncated data for {name!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=pos)
        out[name] = arr.reshape(shape).copy()
        pos += nbytes
    return out
