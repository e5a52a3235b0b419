"""Big-endian field codec for RPC bodies: a type byte followed by fields."""

from __future__ import annotations

import struct

from .net import Address

_U8 = struct.Struct(">B")
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_F64 = struct.Struct(">d")


class DecodeError(ValueError):
    pass


class Writer:
    __slots__ = ("_parts",)

    def __init__(self, msg_type: int | None = None) -> None:
        self._parts: list[bytes] = []
        if msg_type is not None:
            self.u8(msg_type)

    def u8(self, v: int) -> "Writer":
        self._parts.append(_U8.pack(v))
        return self

    def u16(self, v: int) -> "Writer":
        self._parts.append(_U16.pack(v))
        return self

    def u32(self, v: int) -> "Writer":
        self._parts.append(_U32.pack(v))
        return self

    def u64(self, v: int) -> "Writer":
        self._parts.append(_U64.pack(v))
        return self

    def f64(self, v: float) -> "Writer":
        self._parts.append(_F64.pack(v))
        return self

    def flag(self, v: bool) -> "Writer":
        return self.u8(1 if v else 0)

    def bytes(self, v: bytes) -> "Writer":
        self._parts.append(_U32.pack(len(v)))
        self._parts.append(bytes(v))
        return self

    def str(self, v: str) -> "Writer":
        return self.bytes(v.encode("utf-8"))

    def bigint(self, v: int, width: int = 20) -> "Writer":
        self._parts.append(v.to_bytes(width, "big"))
        return self

    def addr(self, a: Address) -> "Writer":
        return self.str(a.host).u16(a.port)

    def addrs(self, items) -> "Writer":
        items = list(items)
        self.u32(len(items))
        for a in items:
            self.addr(a)
        return self

    def strs(self, items) -> "Writer":
        items = list(items)
        self.u32(len(items))
        for s in items:
            self.str(s)
        return self

    def finish(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    __slots__ = ("_buf", "_pos")

    def __init__(self, buf: bytes) -> None:
        self._buf = memoryview(buf)
        self._pos = 0

    def _take(self, n: int) -> memoryview:
        end = self._pos + n
        if end > len(self._buf):
            raise DecodeError("truncated message")
        out = self._buf[self._pos:end]
        self._pos = end
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u16(self) -> int:
        return _U16.unpack(self._take(2))[0]

    def u32(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def f64(self) -> float:
        return _F64.unpack(self._take(8))[0]

    def flag(self) -> bool:
        return self.u8() != 0

    def bytes(self) -> bytes:
        return bytes(self._take(self.u32()))

    def str(self) -> str:
        return self.bytes().decode("utf-8")

    def bigint(self, width: int = 20) -> int:
        return int.from_bytes(self._take(width), "big")

    def addr(self) -> Address:
        host = self.str()
        return Address(host, self.u16())

    def addrs(self) -> list[Address]:
        return [self.addr() for _ in range(self.u32())]

    def strs(self) -> list[str]:
        return [self.str() for _ in range(self.u32())]

    def rest(self) -> bytes:
        return bytes(self._take(len(self._buf) - self._pos))

    @property
    def remaining(self) -> int:
        return len(self._buf) - self._pos
