"""Little-endian binary tensor records.

Tensor record ("GSTN"): magic, u32 version, u32 rank, u64 extents, float32 data.
"""

from __future__ import annotations

import struct

import numpy as np

TENSOR_MAGIC = b"GSTN"
TENSOR_VERSION = 1


class FormatError(ValueError):
    pass


def write_tensor(f, array):
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    f.write(TENSOR_MAGIC)
    f.write(struct.pack("<II", TENSOR_VERSION, arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    f.write(arr.tobytes())


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def read_tensor(f):
    magic = _read_exact(f, 4, "tensor magic")
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    version, rank = struct.unpack("<II", _read_exact(f, 8, "tensor header"))
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported tensor version {version}")
    shape = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank, "tensor extents"))
    count = int(np.prod(shape)) if rank else 1
    data = np.frombuffer(_read_exact(f, 4 * count, "tensor data"), dtype="<f4")
    return data.reshape(shape).astype(np.float32)


def write_string(f, s):
    b = s.encode("utf-8")
    f.write(struct.pack("<I", len(b)))
    f.write(b)


def read_string(f):
    (n,) = struct.unpack("<I", _read_exact(f, 4, "string length"))
    return _read_exact(f, n, "string").decode("utf-8")


def write_named_tensors(f, tensors):
    f.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        write_string(f, name)
        write_tensor(f, tensors[name])


def read_named_tensors(f):
    (n,) = struct.unpack("<I", _read_exact(f, 4, "record count"))
    out = {}
    for _ in range(n):
        name = read_string(f)
        out[name] = read_tensor(f)
    return out
