"""CPIC container: fixed 36-byte little-endian header followed by the range-coded payload.

=======  ======  ===================================
offset   type    field
=======  ======  ===================================
0        4s      magic ``b"CPIC"``
4        u8      version (1)
5        u8      quality_index
6        u32     original_width
10       u32     original_height
14       u32     padded_width
18       u32     padded_height
22       u16     latent_channels
24       8s      model_hash
32       u32     payload_length
=======  ======  ===================================
"""

import struct
from dataclasses import dataclass

from .errors import (BadMagicError, DimensionInconsistencyError, PayloadLengthError,
                     TruncatedError, UnsupportedVersionError)

MAGIC = b"CPIC"
VERSION = 1
MULTIPLE = 32
_LAYOUT = struct.Struct("<4sBBIIIIH8sI")
HEADER_SIZE = _LAYOUT.size

OFF_VERSION = 4
OFF_ORIGINAL = 6
OFF_PADDED_W = 14
OFF_PADDED_H = 18
OFF_HASH = 24
OFF_PAYLOAD_LENGTH = 32


def _pad(n):
    return -(-n // MULTIPLE) * MULTIPLE


@dataclass(frozen=True)
class ContainerHeader:
    quality_index: int
    original_width: int
    original_height: int
    latent_channels: int
    model_hash: bytes
    payload_length: int = 0
    padded_width: int = None
    padded_height: int = None
    version: int = VERSION

    def __post_init__(self):
        if self.padded_width is None:
            object.__setattr__(self, "padded_width", _pad(self.original_width))
        if self.padded_height is None:
            object.__setattr__(self, "padded_height", _pad(self.original_height))

    @property
    def latent_shape(self):
        return (self.latent_channels, self.padded_height // MULTIPLE,
                self.padded_width // MULTIPLE)

    def validate(self):
        if self.version != VERSION:
            raise UnsupportedVersionError(f"container version {self.version}", OFF_VERSION)
        if not 0 <= self.quality_index <= 0xFF:
            raise DimensionInconsistencyError("quality_index must fit in a u8", 5)
        if not (0 < self.original_width < 2 ** 32 and 0 < self.original_height < 2 ** 32):
            raise DimensionInconsistencyError("original dimensions must be positive u32",
                                              OFF_ORIGINAL)
        if self.padded_width != _pad(self.original_width):
            raise DimensionInconsistencyError(
                f"padded width {self.padded_width} != {_pad(self.original_width)}", OFF_PADDED_W)
        if self.padded_height != _pad(self.original_height):
            raise DimensionInconsistencyError(
                f"padded height {self.padded_height} != {_pad(self.original_height)}",
                OFF_PADDED_H)
        if not 0 < self.padded_width < 2 ** 32 or not 0 < self.padded_height < 2 ** 32:
            raise DimensionInconsistencyError("padded dimensions overflow u32", OFF_PADDED_W)
        if not 0 < self.latent_channels < 2 ** 16:
            raise DimensionInconsistencyError("latent_channels must be a positive u16", 22)
        if len(self.model_hash) != 8:
            raise DimensionInconsistencyError("model_hash must be 8 bytes", OFF_HASH)
        if not 0 <= self.payload_length < 2 ** 32:
            raise PayloadLengthError("payload_length overflows u32", OFF_PAYLOAD_LENGTH)


def serialize(header, payload):
    """Header + payload bytes; ``payload_length`` is taken from ``payload``."""
    header = ContainerHeader(
        header.quality_index, header.original_width, header.original_height,
        header.latent_channels, bytes(header.model_hash), len(payload),
        header.padded_width, header.padded_height, header.version)
    header.validate()
    return _LAYOUT.pack(MAGIC, header.version, header.quality_index, header.original_width,
                        header.original_height, header.padded_width, header.padded_height,
                        header.latent_channels, header.model_hash,
                        header.payload_length) + bytes(payload)


def parse(data):
    """Split a container into ``(ContainerHeader, payload)``; every failure is a
    :class:`~cpips.errors.FormatError` subclass carrying the byte offset."""
    data = bytes(data)
    for i in range(min(len(data), 4)):
        if data[i] != MAGIC[i]:
            raise BadMagicError("bad magic, not a CPIC container", offset=i)
    if len(data) < HEADER_SIZE:
        raise TruncatedError(f"header needs {HEADER_SIZE} bytes, got {len(data)}",
                             offset=len(data))
    (_, version, quality, ow, oh, pw, ph, channels, model_hash,
     length) = _LAYOUT.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported container version {version}",
                                      offset=OFF_VERSION)
    header = ContainerHeader(quality, ow, oh, channels, model_hash, length, pw, ph, version)
    header.validate()
    remaining = len(data) - HEADER_SIZE
    if length > remaining:
        raise PayloadLengthError(f"payload_length {length} exceeds the {remaining} bytes left",
                                 offset=OFF_PAYLOAD_LENGTH)
    if length < remaining:
        raise PayloadLengthError(f"{remaining - length} trailing bytes after payload",
                                 offset=HEADER_SIZE + length)
    return header, data[HEADER_SIZE:]
