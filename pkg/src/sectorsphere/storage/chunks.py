"""Chunk stores: in-memory and on-disk, both CRC-checked on every read."""

from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path
from typing import Iterator, NamedTuple
from urllib.parse import quote, unquote

from ..errors import ChunkCorrupt, NotFound

MAGIC = b"SCHK"
FORMAT_VERSION = 1
# magic | version u8 | 3 reserved | crc32 u32 | length u64
HEADER = struct.Struct(">4sB3xIQ")


class ChunkKey(NamedTuple):
    name: str
    index: int
    version: int


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def encode_chunk(data: bytes) -> bytes:
    return HEADER.pack(MAGIC, FORMAT_VERSION, crc32(data), len(data)) + data


def decode_chunk(blob: bytes) -> bytes:
    if len(blob) < HEADER.size:
        raise ChunkCorrupt("chunk file shorter than its header")
    magic, ver, crc, length = HEADER.unpack_from(blob)
    if magic != MAGIC or ver != FORMAT_VERSION or any(blob[5:8]):
        raise ChunkCorrupt("bad chunk header")
    data = blob[HEADER.size:]
    if len(data) != length or crc32(data) != crc:
        raise ChunkCorrupt("chunk CRC mismatch")
    return data


class MemoryChunkStore:
    def __init__(self) -> None:
        self._blocks: dict[ChunkKey, tuple[bytes, int]] = {}

    def put(self, key: ChunkKey, data: bytes, crc: int | None = None) -> int:
        actual = crc32(data)
        if crc is not None and crc != actual:
            raise ChunkCorrupt(f"{key}: CRC mismatch on write")
        self._blocks[key] = (bytes(data), actual)
        return actual

    def get(self, key: ChunkKey) -> bytes:
        try:
            data, crc = self._blocks[key]
        except KeyError:
            raise NotFound(f"chunk {key}") from None
        if crc32(data) != crc:
            raise ChunkCorrupt(f"{key}: stored CRC mismatch")
        return data

    def crc(self, key: ChunkKey) -> int:
        return self._blocks[key][1]

    def has(self, key: ChunkKey) -> bool:
        return key in self._blocks

    def drop(self, key: ChunkKey) -> bool:
        return self._blocks.pop(key, None) is not None

    def keys(self) -> Iterator[ChunkKey]:
        return iter(list(self._blocks))

    def __len__(self) -> int:
        return len(self._blocks)


class DiskChunkStore:
    """One file per chunk: ``<quoted name>.<index>.<version>.chk``."""

    def __init__(self, root: str | os.PathLike) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: ChunkKey) -> Path:
        return self.root / f"{quote(key.name, safe='')}.{key.index}.{key.version}.chk"

    def put(self, key: ChunkKey, data: bytes, crc: int | None = None) -> int:
        actual = crc32(data)
        if crc is not None and crc != actual:
            raise ChunkCorrupt(f"{key}: CRC mismatch on write")
        path = self._path(key)
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(encode_chunk(data))
        os.replace(tmp, path)
        return actual

    def get(self, key: ChunkKey) -> bytes:
        try:
            blob = self._path(key).read_bytes()
        except FileNotFoundError:
            raise NotFound(f"chunk {key}") from None
        return decode_chunk(blob)

    def crc(self, key: ChunkKey) -> int:
        with open(self._path(key), "rb") as fh:
            return HEADER.unpack(fh.read(HEADER.size))[2]

    def has(self, key: ChunkKey) -> bool:
        return self._path(key).exists()

    def drop(self, key: ChunkKey) -> bool:
        try:
            self._path(key).unlink()
            return True
        except FileNotFoundError:
            return False

    def keys(self) -> Iterator[ChunkKey]:
        for p in sorted(self.root.glob("*.chk")):
            stem, idx, ver = p.name[:-4].rsplit(".", 2)
            yield ChunkKey(unquote(stem), int(idx), int(ver))

    def __len__(self) -> int:
        return sum(1 for _ in self.root.glob("*.chk"))
