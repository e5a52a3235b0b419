"""Client-side access session: ask any server, then talk to replicas directly."""

from __future__ import annotations

from typing import Any, Callable, Iterable

from ..codec import Reader, Writer
from ..errors import (
    AccessDenied,
    AllReplicasDown,
    ChunkCorrupt,
    NotEnoughNodes,
    SectorError,
    Unreachable,
)
from ..net import Address
from ..rpc import RpcClient
from ..transport import TransportConfig, get_mux
from .acl import Op, check_access
from .chunks import ChunkKey, crc32
from .metadata import FileMetadata
from .node import (
    CHUNK_GET,
    CHUNK_PUT,
    DELETE,
    LIST,
    LOCATE,
    MEMBERS,
    UPLOAD_COMMIT,
    UPLOAD_INIT,
    key_w,
)


class ClientCtx:
    """A storage client bound to its own endpoint (or sharing a node's)."""

    def __init__(self, ep, servers: Iterable[Address], user: str | None = None,
                 chunk_size: int = 64 * 1024 * 1024, rpc: RpcClient | None = None,
                 transport: TransportConfig | None = None,
                 call_timeout_ms: float = 10_000.0) -> None:
        self.ep = ep
        self.net = ep.net
        self.servers = list(servers)
        if not self.servers:
            raise ValueError("client needs at least one known server")
        self.user = user
        self.chunk_size = chunk_size
        self.rpc = rpc or RpcClient(ep, transport, call_timeout_ms=call_timeout_ms)
        self.remote_fetches = 0

    @classmethod
    def for_node(cls, node, user: str | None = None) -> "ClientCtx":
        return cls(node.ep, [node.addr], user, node.config.chunk_size, rpc=node.rpc)

    # -- plumbing -----------------------------------------------------------

    def _call_any(self, msg: bytes) -> Reader:
        last: SectorError | None = None
        for i, s in enumerate(list(self.servers)):
            try:
                r = self.rpc.call(s, msg)
            except Unreachable as exc:
                last = exc
                continue
            if i:
                # remember the server that answered
                self.servers.remove(s)
                self.servers.insert(0, s)
            return r
        raise last or Unreachable("no servers")

    def _rtt(self, addr: Address) -> float:
        conn = get_mux(self.ep).conns.get(addr)
        if conn is None or not conn.is_open:
            return float("inf")
        return conn.conn_stats().rtt_est_ms

    # -- operations ---------------------------------------------------------

    def _call_any_async(self, msg: bytes, callback: Callable[[Any], None],
                        timeout_ms: float | None = None) -> None:
        servers = list(self.servers)

        def attempt(i: int) -> None:
            def done(res: Any) -> None:
                if isinstance(res, Unreachable) and i + 1 < len(servers):
                    attempt(i + 1)
                else:
                    callback(res)
            self.rpc.call_async(servers[i], msg, done, timeout_ms)
        attempt(0)

    def _block(self, start: Callable[[Callable[[Any], None]], None]) -> Any:
        box: list = []
        start(box.append)
        self.net.run_until(lambda: bool(box))
        if isinstance(box[0], BaseException):
            raise box[0]
        return box[0]

    def upload(self, name: str, data: bytes, user: str | None = None, *,
               writers: Iterable[str] = (), public_read: bool = True,
               chunk_size: int | None = None) -> FileMetadata:
        return self._block(lambda cb: self.upload_async(
            name, data, cb, user, writers=writers, public_read=public_read, chunk_size=chunk_size))

    def upload_async(self, name: str, data: bytes, callback: Callable[[Any], None],
                     user: str | None = None, *, writers: Iterable[str] = (),
                     public_read: bool = True, chunk_size: int | None = None) -> None:
        """Like ``upload`` but completes through ``callback`` (metadata or error)."""
        user = (user if user is not None else self.user) or ""
        csize = chunk_size or self.chunk_size
        data = bytes(data)
        writers = set(writers) | {user}

        def initialised(res: Any) -> None:
            if isinstance(res, SectorError):
                callback(res)
                return
            r = Reader(res)
            version = r.u64()
            placement = [r.addrs() for _ in range(r.u32())]
            checksums: list[int] = []
            replicas: list[list[Address]] = [[] for _ in placement]
            pending = [sum(len(t) for t in placement)]

            def stored(i: int, addr: Address):
                def cb(res: Any) -> None:
                    if not isinstance(res, SectorError):
                        replicas[i].append(addr)
                    pending[0] -= 1
                    if pending[0] == 0:
                        commit(version, checksums,
                               [[a for a in t if a in replicas[j]] for j, t in enumerate(placement)])
                return cb

            for i, targets in enumerate(placement):
                block = data[i * csize:(i + 1) * csize]
                checksums.append(crc32(block))
            if pending[0] == 0:
                commit(version, checksums, replicas)
                return
            for i, targets in enumerate(placement):
                block = data[i * csize:(i + 1) * csize]
                msg = (key_w(Writer(CHUNK_PUT), ChunkKey(name, i, version))
                       .u32(checksums[i]).bytes(block).finish())
                for a in targets:
                    self.rpc.call_async(a, msg, stored(i, a))

        def commit(version: int, checksums: list[int], replicas: list[list[Address]]) -> None:
            if any(not reps for reps in replicas):
                callback(NotEnoughNodes(f"no replica accepted a chunk of {name!r}"))
                return
            meta = FileMetadata(name, len(data), csize, user, version, replicas, checksums,
                                writers, public_read)
            w = meta.encode(Writer(UPLOAD_COMMIT).u8(0)).str(user)
            self._call_any_async(w.finish(),
                                 lambda res: callback(res if isinstance(res, SectorError) else meta))

        self._call_any_async(Writer(UPLOAD_INIT).u8(0).str(name).u64(len(data)).u64(csize)
                             .str(user).finish(), initialised)

    def stat(self, name: str, user: str | None = None) -> FileMetadata:
        user = user if user is not None else self.user
        r = self._call_any(Writer(LOCATE).u8(0).str(name).str(user or "").finish())
        return FileMetadata.decode(r)

    def locate(self, name: str, user: str | None = None) -> list[list[Address]]:
        return self.stat(name, user).replicas

    def fetch_chunk(self, meta: FileMetadata, i: int, prefer: Iterable[Address] = ()) -> bytes:
        """Fetch chunk ``i`` from the nearest replica that serves a CRC-clean copy."""
        return self._block(lambda cb: self.fetch_chunk_async(
            ChunkKey(meta.name, i, meta.version), meta.checksums[i], meta.replicas[i], cb, prefer))

    def fetch_chunk_async(self, key: ChunkKey, crc: int, replicas: Iterable[Address],
                          callback: Callable[[Any], None], prefer: Iterable[Address] = ()) -> None:
        reps = list(replicas)
        first = [a for a in prefer if a in reps]
        rest = sorted((a for a in reps if a not in first), key=lambda a: (self._rtt(a), reps.index(a)))
        order = first + rest
        msg = key_w(Writer(CHUNK_GET), key).finish()
        corrupt = [False]

        def attempt(j: int) -> None:
            if j == len(order):
                if corrupt[0]:
                    callback(ChunkCorrupt(f"no clean copy of {key}"))
                else:
                    callback(AllReplicasDown(f"every replica of {key} is unreachable"))
                return

            def done(res: Any) -> None:
                if isinstance(res, SectorError):
                    if isinstance(res, ChunkCorrupt):
                        corrupt[0] = True
                    attempt(j + 1)
                    return
                r = Reader(res)
                r.u32()
                block = r.bytes()
                if crc32(block) != crc:
                    corrupt[0] = True
                    attempt(j + 1)
                    return
                self.remote_fetches += 1
                callback(block)
            self.rpc.call_async(order[j], msg, done)
        attempt(0)

    def download(self, name: str, user: str | None = None) -> bytes:
        meta = self.stat(name, user)
        if not check_access(meta.acl, user if user is not None else self.user, Op.READ):
            raise AccessDenied(name)
        out = [self.fetch_chunk(meta, i) for i in range(meta.chunk_count)]
        return b"".join(out)

    def list_files(self, prefix: str = "") -> list[FileMetadata]:
        r = self._call_any(Writer(LIST).str(prefix).finish())
        return [FileMetadata.decode(r) for _ in range(r.u32())]

    def delete(self, name: str, user: str | None = None) -> None:
        user = user if user is not None else self.user
        self._call_any(Writer(DELETE).u8(0).str(name).str(user or "").finish())

    def members(self) -> list[Address]:
        """Live storage nodes as currently known to the cluster."""
        return self._call_any(Writer(MEMBERS).finish()).addrs()

    def close(self) -> None:
        self.rpc.close()
