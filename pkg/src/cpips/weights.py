"""CPWT weight container.

Layout (all integers little-endian)::

    b"CPWT"  u8 version  u32 count
    count x { u16 name_len, name (UTF-8), u8 dtype (0 = f32), u8 rank,
              rank x u32 dims, prod(dims) x f32 values }
"""

import hashlib
import struct
from collections import OrderedDict

import numpy as np
import torch

from .errors import BadMagicError, FormatError, TruncatedError, UnsupportedVersionError

MAGIC = b"CPWT"
VERSION = 1
DTYPE_F32 = 0


def dumps(entries):
    """Serialize a name -> array mapping (insertion order is kept)."""
    out = [MAGIC, struct.pack("<BI", VERSION, len(entries))]
    for name, value in entries.items():
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        arr = np.asarray(value, dtype="<f4")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def loads(data):
    data = memoryview(bytes(data))
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise TruncatedError("weight file ends early", offset=pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise BadMagicError("not a CPWT file", offset=0)
    version, count = struct.unpack("<BI", take(5))
    if version != VERSION:
        raise UnsupportedVersionError(f"CPWT version {version}", offset=4)
    entries = OrderedDict()
    for _ in range(count):
        (n,) = struct.unpack("<H", take(2))
        start = pos
        try:
            name = bytes(take(n)).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("entry name is not UTF-8", offset=start) from None
        dtype, rank = struct.unpack("<BB", take(2))
        if dtype != DTYPE_F32:
            raise FormatError(f"unknown dtype {dtype}", offset=pos - 2)
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims, dtype=np.int64))
        values = np.frombuffer(take(4 * size), dtype="<f4").reshape(dims)
        entries[name] = values.copy()
    if pos != len(data):
        raise FormatError("trailing bytes after last entry", offset=pos)
    return entries


def save(path, entries):
    data = dumps(entries)
    with open(path, "wb") as f:
        f.write(data)
    return data


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())


def digest(data):
    """8-byte model hash stamped into bitstream headers."""
    return hashlib.sha256(data).digest()[:8]
