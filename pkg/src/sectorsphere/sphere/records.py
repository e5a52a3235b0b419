"""Record framing for Sphere streams."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable

from ..errors import AdmissionFailed

_LEN = struct.Struct(">I")


@dataclass(frozen=True)
class RecordFormat:
    """``width`` set: fixed-width records. ``width`` None: u32 length-prefixed."""

    width: int | None = None

    def __post_init__(self) -> None:
        if self.width is not None and self.width <= 0:
            raise ValueError("record width must be positive")

    @property
    def fixed(self) -> bool:
        return self.width is not None

    def split(self, data: bytes) -> list[bytes]:
        if self.width is not None:
            w = self.width
            if len(data) % w:
                raise AdmissionFailed(f"{len(data)} bytes is not a whole number of {w}-byte records")
            return [data[i:i + w] for i in range(0, len(data), w)]
        out = []
        pos, end = 0, len(data)
        while pos < end:
            if pos + 4 > end:
                raise AdmissionFailed("truncated record length prefix")
            (n,) = _LEN.unpack_from(data, pos)
            pos += 4
            if pos + n > end:
                raise AdmissionFailed("truncated record body")
            out.append(data[pos:pos + n])
            pos += n
        return out

    def join(self, records: Iterable[bytes]) -> bytes:
        if self.width is not None:
            recs = list(records)
            for r in recs:
                if len(r) != self.width:
                    raise ValueError(f"record of {len(r)} bytes in a {self.width}-byte format")
            return b"".join(recs)
        return b"".join(_LEN.pack(len(r)) + r for r in records)

    def encode(self) -> int:
        return 0 if self.width is None else self.width

    @classmethod
    def decode(cls, v: int) -> "RecordFormat":
        return cls(v or None)


def FIXED(width: int) -> RecordFormat:
    return RecordFormat(width)


LENGTH_PREFIXED = RecordFormat(None)


@dataclass
class RecordStream:
    dataset: list[str]
    record_format: RecordFormat = LENGTH_PREFIXED
    total_records: int | None = None
