"""Binary frame codec shared by every transport.

Frame layout::

    magic    u32 big-endian   0x44465754 ("DFWT")
    version  u8               1
    kind     u8
    epoch    u32 little-endian
    round    u32 little-endian
    count    u64 little-endian  number of f64 payload values
    payload  count * f64 little-endian
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = 0x44465754
VERSION = 1
HEADER = struct.Struct("<BBIIQ")
HEADER_SIZE = 4 + HEADER.size
_F64 = np.dtype("<f8")


class FrameError(ValueError):
    pass


class Kind(enum.IntEnum):
    CONTROL = 0
    U_VECTOR = 1
    V_VECTOR = 2
    SCALAR_PAIR = 3
    ATOM_BROADCAST = 4
    GRADIENT_BLOCK = 5


@dataclass(frozen=True)
class Message:
    kind: Kind
    epoch: int
    round: int
    payload: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        payload = np.ascontiguousarray(self.payload, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "payload", payload)
        if self.kind is Kind.CONTROL and payload.size:
            raise FrameError("control frames carry no payload")

    @classmethod
    def control(cls, epoch=0, round=0):
        return cls(Kind.CONTROL, epoch, round, np.empty(0))

    def expected_length(self, d, m):
        return payload_length(self.kind, d, m)


def payload_length(kind, d, m):
    return {
        Kind.CONTROL: 0,
        Kind.U_VECTOR: d,
        Kind.V_VECTOR: m,
        Kind.SCALAR_PAIR: 2,
        Kind.ATOM_BROADCAST: 1 + d + m,
        Kind.GRADIENT_BLOCK: d * m,
    }[Kind(kind)]


def encode(msg: Message) -> bytes:
    header = struct.pack(">I", MAGIC) + HEADER.pack(VERSION, int(msg.kind), msg.epoch, msg.round, msg.payload.size)
    return header + msg.payload.astype(_F64, copy=False).tobytes()


def decode_header(buf: bytes):
    """Parse the fixed-size header; returns ``(kind, epoch, round, count)``."""
    if len(buf) != HEADER_SIZE:
        raise FrameError(f"header must be {HEADER_SIZE} bytes, got {len(buf)}")
    (magic,) = struct.unpack(">I", buf[:4])
    if magic != MAGIC:
        raise FrameError(f"bad magic 0x{magic:08x}")
    version, kind, epoch, rnd, count = HEADER.unpack(buf[4:])
    if version != VERSION:
        raise FrameError(f"unsupported frame version {version}")
    try:
        kind = Kind(kind)
    except ValueError:
        raise FrameError(f"unknown message kind {kind}") from None
    return kind, epoch, rnd, count


def decode(buf: bytes) -> Message:
    kind, epoch, rnd, count = decode_header(buf[:HEADER_SIZE])
    body = buf[HEADER_SIZE:]
    if len(body) != 8 * count:
        raise FrameError(f"payload holds {len(body)} bytes, header announced {count} values")
    return Message(kind, epoch, rnd, np.frombuffer(body, dtype=_F64).astype(np.float64))
