"""PTNS1 tensor files.

Layout: magic ``PTNS1\\n``, u32 rank, ``rank`` u32 dimensions, then the
row-major float64 payload. All integers and floats are little-endian.
"""

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PTNS1\n"


class TensorFormatError(ValueError):
    pass


def dumps(array) -> bytes:
    arr = np.asarray(array, dtype="<f8")
    head = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def loads(blob: bytes) -> np.ndarray:
    if not blob.startswith(MAGIC):
        raise TensorFormatError("missing PTNS1 magic")
    pos = len(MAGIC)
    if len(blob) < pos + 4:
        raise TensorFormatError("truncated header")
    (rank,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    if len(blob) < pos + 4 * rank:
        raise TensorFormatError("truncated shape")
    shape = struct.unpack_from(f"<{rank}I", blob, pos)
    pos += 4 * rank
    count = int(np.prod(shape, dtype=np.int64))
    if len(blob) - pos != 8 * count:
        raise TensorFormatError(f"payload holds {len(blob) - pos} bytes, shape {shape} needs {8 * count}")
    return np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)


def save(path, array) -> None:
    Path(path).write_bytes(dumps(array))


def load(path) -> np.ndarray:
    return loads(Path(path).read_bytes())
