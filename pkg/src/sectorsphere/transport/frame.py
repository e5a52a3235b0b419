"""Bit-exact frame codec.

Header layout (32 bytes, big-endian)::

    magic "SSTP" | version u8 | kind u8 | flags u16 | seq u32 | ack u32 |
    request_id u64 | payload_len u32 | header_crc32 u32

The CRC covers the first 28 header bytes. For DATA frames the ``ack`` field
carries the sender's smoothed RTT in microseconds, which the receiver uses to
pace its loss reports.
"""

from __future__ import annotations

import struct
import zlib
from enum import IntEnum, IntFlag
from typing import NamedTuple

MAGIC = b"SSTP"
VERSION = 1
HEADER = struct.Struct(">4sBBHIIQI")
HEADER_SIZE = 32
MAX_PAYLOAD = 1440
SEQ_MOD = 1 << 32

assert HEADER.size + 4 == HEADER_SIZE


class FrameError(ValueError):
    pass


class Kind(IntEnum):
    DATA = 0
    ACK = 1
    NAK = 2
    HANDSHAKE = 3
    KEEPALIVE = 4
    MSG = 5


class Flag(IntFlag):
    NONE = 0
    REQUEST = 0x01
    RESPONSE = 0x02
    LAST = 0x04
    FIN = 0x08
    CLOSE = 0x10
    ERROR = 0x20


class Frame(NamedTuple):
    kind: int
    flags: int
    seq: int
    ack: int
    request_id: int
    payload: bytes


def encode_frame(kind: int, seq: int = 0, payload: bytes = b"", *, flags: int = 0,
                 ack: int = 0, request_id: int = 0) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise FrameError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    head = HEADER.pack(MAGIC, VERSION, kind, flags, seq % SEQ_MOD, ack % SEQ_MOD,
                       request_id, len(payload))
    return head + zlib.crc32(head).to_bytes(4, "big") + payload


def decode_frame(data: bytes) -> Frame:
    if len(data) < HEADER_SIZE:
        raise FrameError("short frame")
    head = data[:28]
    magic, version, kind, flags, seq, ack, rid, plen = HEADER.unpack(head)
    if magic != MAGIC:
        raise FrameError("bad magic")
    if version != VERSION:
        raise FrameError(f"unsupported version {version}")
    if zlib.crc32(head) != int.from_bytes(data[28:32], "big"):
        raise FrameError("header crc mismatch")
    if plen != len(data) - HEADER_SIZE:
        raise FrameError("payload length mismatch")
    if kind > Kind.MSG:
        raise FrameError(f"unknown kind {kind}")
    return Frame(kind, flags, seq, ack, rid, data[HEADER_SIZE:])


def unwrap_seq(wire: int, ref: int) -> int:
    """Map a 32-bit wire sequence number to the unbounded value nearest ``ref``."""
    diff = (wire - ref) % SEQ_MOD
    if diff >= SEQ_MOD // 2:
        diff -= SEQ_MOD
    return ref + diff
