"""File metadata records and the per-node metadata shard with its log."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from ..codec import Reader, Writer
from ..net import Address
from .acl import AccessControlList


@dataclass
class FileMetadata:
    name: str
    size_bytes: int
    chunk_size: int
    owner: str
    version: int = 1
    replicas: list[list[Address]] = field(default_factory=list)
    checksums: list[int] = field(default_factory=list)
    writers: set[str] = field(default_factory=set)
    public_read: bool = True

    def __post_init__(self) -> None:
        self.writers = set(self.writers) | {self.owner}

    @property
    def chunk_count(self) -> int:
        return chunk_count(self.size_bytes, self.chunk_size)

    @property
    def acl(self) -> AccessControlList:
        return AccessControlList(self.owner, set(self.writers), self.public_read)

    def chunk_len(self, i: int) -> int:
        return min(self.chunk_size, self.size_bytes - i * self.chunk_size)

    def encode(self, w: Writer) -> Writer:
        w.str(self.name).u64(self.size_bytes).u64(self.chunk_size).str(self.owner)
        w.u64(self.version).flag(self.public_read).strs(sorted(self.writers))
        w.u32(len(self.replicas))
        for reps, crc in zip(self.replicas, self.checksums):
            w.u32(crc).addrs(reps)
        return w

    @classmethod
    def decode(cls, r: Reader) -> "FileMetadata":
        name, size, csize, owner = r.str(), r.u64(), r.u64(), r.str()
        version, public, writers = r.u64(), r.flag(), r.strs()
        replicas, checksums = [], []
        for _ in range(r.u32()):
            checksums.append(r.u32())
            replicas.append(r.addrs())
        return cls(name, size, csize, owner, version, replicas, checksums, set(writers), public)

    def to_json(self) -> dict:
        return {
            "name": self.name, "size": self.size_bytes, "chunk_size": self.chunk_size,
            "owner": self.owner, "version": self.version, "public_read": self.public_read,
            "writers": sorted(self.writers), "checksums": self.checksums,
            "replicas": [[str(a) for a in reps] for reps in self.replicas],
        }

    @classmethod
    def from_json(cls, d: dict) -> "FileMetadata":
        return cls(d["name"], d["size"], d["chunk_size"], d["owner"], d["version"],
                   [[Address.parse(a) for a in reps] for reps in d["replicas"]],
                   list(d["checksums"]), set(d["writers"]), d["public_read"])


def chunk_count(size: int, chunk_size: int) -> int:
    return -(-size // chunk_size)


class MetadataStore:
    """Name -> metadata, optionally persisted as an append-only JSON-lines log."""

    def __init__(self, log_path: str | os.PathLike | None = None) -> None:
        self.entries: dict[str, FileMetadata] = {}
        self.log_path = Path(log_path) if log_path is not None else None
        if self.log_path is not None and self.log_path.exists():
            self._replay()

    def _replay(self) -> None:
        with open(self.log_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    break  # torn final write
                if rec["op"] == "put":
                    meta = FileMetadata.from_json(rec["meta"])
                    self.entries[meta.name] = meta
                else:
                    self.entries.pop(rec["name"], None)

    def _append(self, rec: dict) -> None:
        if self.log_path is None:
            return
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")

    def get(self, name: str) -> FileMetadata | None:
        return self.entries.get(name)

    def put(self, meta: FileMetadata) -> None:
        self.entries[meta.name] = meta
        self._append({"op": "put", "meta": meta.to_json()})

    def delete(self, name: str) -> bool:
        if self.entries.pop(name, None) is None:
            return False
        self._append({"op": "del", "name": name})
        return True

    def names(self, prefix: str = "") -> list[str]:
        return sorted(n for n in self.entries if n.startswith(prefix))

    def __len__(self) -> int:
        return len(self.entries)
