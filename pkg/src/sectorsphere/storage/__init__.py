"""Chunked, replicated file storage with metadata on the Chord ring."""

from .acl import AccessControlList, Op, check_access
from .audit import ActionKind, AuditResult, ClusterView, ReplicationAction, replication_audit
from .chunks import ChunkKey, DiskChunkStore, MemoryChunkStore, crc32, decode_chunk, encode_chunk
from .client import ClientCtx
from .metadata import FileMetadata, MetadataStore, chunk_count
from .node import AuditReport, SectorNode, StorageConfig


def upload(client: ClientCtx, name: str, data: bytes, user: str | None = None, **kw) -> FileMetadata:
    return client.upload(name, data, user, **kw)


def locate(client: ClientCtx, name: str):
    return client.locate(name)


def download(client: ClientCtx, name: str, user: str | None = None) -> bytes:
    return client.download(name, user)


def list_files(client: ClientCtx, prefix: str = ""):
    return client.list_files(prefix)


def delete(client: ClientCtx, name: str, user: str | None = None) -> None:
    client.delete(name, user)


__all__ = [
    "AccessControlList", "ActionKind", "AuditReport", "AuditResult", "ChunkKey", "ClientCtx",
    "ClusterView", "DiskChunkStore", "FileMetadata", "MemoryChunkStore", "MetadataStore", "Op",
    "ReplicationAction", "SectorNode", "StorageConfig", "check_access", "chunk_count", "crc32",
    "decode_chunk", "delete", "download", "encode_chunk", "list_files", "locate",
    "replication_audit", "upload",
]
