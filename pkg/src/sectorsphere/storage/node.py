"""A Sector server: routing member, chunk holder, metadata shard owner.

Metadata for a name lives on the Chord successor of its hash (and a backup
copy on that node's successor). Any server accepts metadata operations and
forwards them to the owner. One node is the designated coordinator: it
collects heartbeats, publishes the live-member view used for placement,
and runs replication audits.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Any, Callable

from ..codec import Reader, Writer
from ..errors import (
    AccessDenied,
    ChunkCorrupt,
    LookupTimeout,
    NameConflict,
    NotEnoughNodes,
    NotFound,
    SectorError,
    SourceUnreachable,
    Unreachable,
)
from ..net import Address
from ..routing import ChordNode, RpcLinks, hash_id, serve_routing
from ..rpc import RpcClient, RpcServer
from ..transport import TransportConfig, get_mux
from .acl import Op, check_access
from .audit import ActionKind, AuditResult, ClusterView, ReplicationAction, replication_audit
from .chunks import ChunkKey, DiskChunkStore, MemoryChunkStore, crc32
from .metadata import FileMetadata, MetadataStore, chunk_count

log = logging.getLogger(__name__)

UPLOAD_INIT = 0x20
UPLOAD_COMMIT = 0x21
CHUNK_PUT = 0x22
CHUNK_GET = 0x23
CHUNK_DROP = 0x24
LOCATE = 0x25
LIST = 0x26
LIST_LOCAL = 0x27
DELETE = 0x28
META_SYNC = 0x29
META_DROP = 0x2A
HEARTBEAT = 0x2B
INVENTORY = 0x2C
REPLICA_PUT = 0x2D
META_BACKUP = 0x2E
MEMBERS = 0x2F

OWNER_OPS = (UPLOAD_INIT, UPLOAD_COMMIT, LOCATE, DELETE, META_SYNC)


@dataclass
class StorageConfig:
    chunk_size: int = 64 * 1024 * 1024
    target_replicas: int = 3
    m: int = 160
    heartbeat_ms: float = 1000.0
    # periodic Chord upkeep; 0 leaves it to explicit maintenance_round calls
    stabilize_ms: float = 500.0
    dead_after_misses: int = 5
    routing_timeout_ms: float = 1000.0
    call_timeout_ms: float = 10_000.0
    replica_fetch_attempts: int = 3
    # None lets any named user create files; otherwise only these users may
    community_writers: set[str] | None = None
    transport: TransportConfig = field(default_factory=TransportConfig)


def key_w(w: Writer, key: ChunkKey) -> Writer:
    return w.str(key.name).u32(key.index).u64(key.version)


def key_r(r: Reader) -> ChunkKey:
    return ChunkKey(r.str(), r.u32(), r.u64())


class SectorNode:
    def __init__(self, net, addr: Address, config: StorageConfig | None = None,
                 coordinator: Address | None = None, data_dir: str | None = None) -> None:
        self.net = net
        self.config = cfg = config or StorageConfig()
        self.ep = net.bind(addr)
        self.addr: Address = self.ep.addr
        self.server = RpcServer(self.ep, cfg.transport)
        self.rpc = RpcClient(self.ep, cfg.transport, local=self.server,
                             call_timeout_ms=cfg.call_timeout_ms)
        self.chord = ChordNode(self.addr, cfg.m, RpcLinks(self.rpc, cfg.m, cfg.routing_timeout_ms))
        serve_routing(self.server, self.chord)
        if data_dir is None:
            self.chunks = MemoryChunkStore()
            self.meta = MetadataStore()
        else:
            self.chunks = DiskChunkStore(f"{data_dir}/chunks")
            self.meta = MetadataStore(f"{data_dir}/metadata.log")
        self.coordinator = coordinator or self.addr
        self.members: dict[Address, int] = {}
        self.last_seen: dict[Address, float] = {}
        self.reported_load: dict[Address, int] = {}
        self.pending_versions: dict[str, int] = {}
        self.corrupt_reads = 0  # fault injection: flip a byte in the next N served chunks
        self.alive = True
        self._timers: list = []
        self._upkeep_timer = None
        self._upkeep_busy = False
        self._rng = random.Random(str(self.addr))
        self.extensions: dict[str, Any] = {}
        self._register()

    def __repr__(self) -> str:
        return f"SectorNode({self.addr})"

    @property
    def is_coordinator(self) -> bool:
        return self.coordinator == self.addr

    # -- lifecycle ----------------------------------------------------------

    def join(self, bootstrap: Address | None) -> None:
        self.chord.join(bootstrap)

    def start_background(self) -> None:
        """Start the periodic heartbeat and ring upkeep (staggered per node)."""
        offset = self._rng.uniform(0, self.config.heartbeat_ms)
        self._timers.append(self.net.call_later(offset, self._heartbeat))
        if self.config.stabilize_ms > 0:
            self._upkeep_timer = self.net.call_later(
                self._rng.uniform(0, self.config.stabilize_ms), self._upkeep)

    def _upkeep(self) -> None:
        if not self.alive:
            return
        self._upkeep_timer = self.net.call_later(self.config.stabilize_ms, self._upkeep)
        if self._upkeep_busy:
            return
        self._upkeep_busy = True

        def done() -> None:
            self._upkeep_busy = False
        self.chord.maintenance_async(done)

    def kill(self) -> None:
        self.alive = False
        for t in self._timers:
            t.cancel()
        if self._upkeep_timer is not None:
            self._upkeep_timer.cancel()
        get_mux(self.ep).shutdown()
        self.ep.close()

    def maintenance_round(self) -> None:
        if self.alive:
            self.chord.maintenance_round()

    # -- membership ---------------------------------------------------------

    def _heartbeat(self) -> None:
        if not self.alive:
            return
        w = Writer(HEARTBEAT).addr(self.addr).u64(len(self.chunks))
        self.rpc.call_async(self.coordinator, w.finish(), self._on_heartbeat_reply,
                            self.config.heartbeat_ms * 2)
        self._timers = [self.net.call_later(self.config.heartbeat_ms, self._heartbeat)]

    def _on_heartbeat_reply(self, result: Any) -> None:
        if isinstance(result, SectorError):
            return
        r = Reader(result)
        self.members = {r.addr(): r.u64() for _ in range(r.u32())}

    def live_members(self) -> dict[Address, int]:
        """Coordinator's view: nodes heard from within the liveness window."""
        window = self.config.heartbeat_ms * self.config.dead_after_misses
        now = self.net.now
        live = {a: self.reported_load.get(a, 0) for a, t in self.last_seen.items()
                if now - t <= window}
        live[self.addr] = len(self.chunks)
        return live

    def placement_view(self) -> dict[Address, int]:
        if self.is_coordinator:
            return self.live_members()
        return dict(self.members) if self.members else {self.addr: len(self.chunks)}

    def _h_heartbeat(self, r: Reader, _reply) -> bytes:
        addr, load = r.addr(), r.u64()
        self.last_seen[addr] = self.net.now
        self.reported_load[addr] = load
        live = self.live_members()
        w = Writer().u32(len(live))
        for a in sorted(live):
            w.addr(a).u64(live[a])
        return w.finish()

    # -- routing helpers ----------------------------------------------------

    def owner_of(self, name: str) -> Address:
        try:
            return self.chord.lookup(hash_id(name, self.config.m))[0].addr
        except LookupTimeout as exc:
            raise Unreachable(f"no route to owner of {name!r}: {exc}") from exc

    def _register(self) -> None:
        s = self.server
        for t in OWNER_OPS:
            s.register(t, self._owner_dispatch(t))
        s.register(CHUNK_PUT, self._h_chunk_put)
        s.register(CHUNK_GET, self._h_chunk_get)
        s.register(CHUNK_DROP, self._h_chunk_drop)
        s.register(LIST, self._h_list)
        s.register(LIST_LOCAL, self._h_list_local)
        s.register(META_DROP, self._h_meta_drop)
        s.register(META_BACKUP, self._h_meta_backup)
        s.register(HEARTBEAT, self._h_heartbeat)
        s.register(INVENTORY, self._h_inventory)
        s.register(REPLICA_PUT, self._h_replica_put)
        s.register(MEMBERS, lambda _r, _reply: Writer().addrs(sorted(self.placement_view())).finish())

    def _owner_dispatch(self, msg_type: int) -> Callable:
        local = {
            UPLOAD_INIT: self._upload_init,
            UPLOAD_COMMIT: self._upload_commit,
            LOCATE: self._locate,
            DELETE: self._delete,
            META_SYNC: self._meta_sync,
        }[msg_type]

        def handler(r: Reader, reply) -> bytes | None:
            forwarded = r.u8()
            body = r.rest()
            if forwarded:
                return local(Reader(body))
            name = Reader(body).str()

            def relayed(res: Any) -> None:
                if isinstance(res, SectorError):
                    reply.error(res)
                else:
                    reply.ok(res)

            def located(res: Any) -> None:
                if isinstance(res, LookupTimeout):
                    reply.error(Unreachable(f"no route to owner of {name!r}: {res}"))
                elif isinstance(res, SectorError):
                    reply.error(res)
                elif res[0].addr == self.addr:
                    try:
                        reply.ok(local(Reader(body)))
                    except SectorError as exc:
                        reply.error(exc)
                else:
                    self.rpc.call_async(res[0].addr, bytes([msg_type, 1]) + body, relayed)

            self.chord.lookup_async(hash_id(name, self.config.m), located)
            return None
        return handler

    # -- metadata owner operations -----------------------------------------

    def _may_create(self, user: str | None) -> bool:
        if not user:
            return False
        cw = self.config.community_writers
        return cw is None or user in cw

    def _upload_init(self, r: Reader) -> bytes:
        name, size, csize, user = r.str(), r.u64(), r.u64(), r.str()
        existing = self.meta.get(name)
        if existing is not None:
            if not check_access(existing.acl, user, Op.WRITE):
                raise AccessDenied(f"{user!r} may not write {name!r}")
        elif not self._may_create(user):
            raise AccessDenied(f"{user!r} may not create files")
        if csize <= 0:
            raise SectorError("chunk size must be positive")
        version = max(existing.version if existing else 0, self.pending_versions.get(name, 0)) + 1
        self.pending_versions[name] = version
        view = self.placement_view()
        if not view:
            raise NotEnoughNodes("no live storage nodes")
        want = min(self.config.target_replicas, len(view))
        w = Writer().u64(version)
        n = chunk_count(size, csize)
        w.u32(n)
        for _ in range(n):
            chosen = sorted(view, key=lambda a: (view[a], a))[:want]
            for a in chosen:
                view[a] += 1
            w.addrs(chosen)
        if not self.is_coordinator and self.members:
            self.members = view  # keep later placements spread until the next heartbeat
        return w.finish()

    def _upload_commit(self, r: Reader) -> bytes:
        meta = FileMetadata.decode(r)
        user = r.str()
        existing = self.meta.get(meta.name)
        if existing is not None:
            if not check_access(existing.acl, user, Op.WRITE):
                raise AccessDenied(f"{user!r} may not write {meta.name!r}")
            if meta.version <= existing.version:
                raise NameConflict(f"{meta.name!r} version {meta.version} already committed")
        elif not self._may_create(user):
            raise AccessDenied(f"{user!r} may not create files")
        self.meta.put(meta)
        if self.pending_versions.get(meta.name) == meta.version:
            del self.pending_versions[meta.name]
        self._backup(meta)
        if existing is not None:
            self._drop_chunks(existing)
        return Writer().u64(meta.version).finish()

    def _locate(self, r: Reader) -> bytes:
        name = r.str()
        user = r.str() if r.remaining else ""
        meta = self.meta.get(name)
        if meta is None:
            raise NotFound(name)
        if not check_access(meta.acl, user or None, Op.READ):
            raise AccessDenied(f"{user!r} may not read {name!r}")
        return meta.encode(Writer()).finish()

    def _delete(self, r: Reader) -> bytes:
        name, user = r.str(), r.str()
        meta = self.meta.get(name)
        if meta is None:
            raise NotFound(name)
        if not check_access(meta.acl, user or None, Op.WRITE):
            raise AccessDenied(f"{user!r} may not delete {name!r}")
        self.meta.delete(name)
        self.pending_versions.pop(name, None)
        succ = self.chord.successor.addr
        if succ != self.addr:
            self.rpc.call_async(succ, Writer(META_DROP).str(name).u64(meta.version).finish(),
                                lambda _res: None)
        self._drop_chunks(meta)
        return b""

    def _meta_sync(self, r: Reader) -> bytes:
        """Install coordinator-supplied metadata if it is at least as new."""
        meta = FileMetadata.decode(r)
        existing = self.meta.get(meta.name)
        if existing is None or meta.version >= existing.version:
            self.meta.put(meta)
        self._backup(self.meta.get(meta.name))
        return Writer().addr(self.chord.successor.addr).finish()

    def _backup(self, meta: FileMetadata) -> None:
        succ = self.chord.successor.addr
        if succ != self.addr:
            w = meta.encode(Writer(META_BACKUP))
            self.rpc.call_async(succ, w.finish(), lambda _res: None)

    def _h_meta_backup(self, r: Reader, _reply) -> bytes:
        meta = FileMetadata.decode(r)
        existing = self.meta.get(meta.name)
        if existing is None or meta.version >= existing.version:
            self.meta.put(meta)
        return b""

    def _h_meta_drop(self, r: Reader, _reply) -> bytes:
        name = r.str()
        version = r.u64() if r.remaining else None
        existing = self.meta.get(name)
        if existing is not None and (version is None or existing.version <= version):
            self.meta.delete(name)
        return b""

    def _drop_chunks(self, meta: FileMetadata) -> None:
        for i, reps in enumerate(meta.replicas):
            msg = key_w(Writer(CHUNK_DROP), ChunkKey(meta.name, i, meta.version)).finish()
            for a in reps:
                self.rpc.call_async(a, msg, lambda _res: None)

    # -- chunk service ------------------------------------------------------

    def _h_chunk_put(self, r: Reader, _reply) -> bytes:
        key = key_r(r)
        crc = r.u32()
        data = r.bytes()
        self.chunks.put(key, data, crc)
        return b""

    def _h_chunk_get(self, r: Reader, _reply) -> bytes:
        key = key_r(r)
        data = self.chunks.get(key)
        crc = crc32(data)
        if self.corrupt_reads > 0 and data:
            self.corrupt_reads -= 1
            data = bytes([data[0] ^ 0xFF]) + data[1:]
        return Writer().u32(crc).bytes(data).finish()

    def _h_chunk_drop(self, r: Reader, _reply) -> bytes:
        self.chunks.drop(key_r(r))
        return b""

    def _h_replica_put(self, r: Reader, reply) -> None:
        key = key_r(r)
        source = r.addr()
        want_crc = r.u32()
        attempts = [0]
        msg = key_w(Writer(CHUNK_GET), key).finish()

        def fetched(res: Any) -> None:
            attempts[0] += 1
            if isinstance(res, Unreachable):
                reply.error(SourceUnreachable(f"{source}: {res}"))
                return
            if isinstance(res, SectorError):
                reply.error(res)
                return
            rr = Reader(res)
            rr.u32()
            data = rr.bytes()
            if crc32(data) != want_crc:
                if attempts[0] < self.config.replica_fetch_attempts:
                    self.rpc.call_async(source, msg, fetched)
                else:
                    reply.error(ChunkCorrupt(f"{key}: copies from {source} keep failing CRC"))
                return
            self.chunks.put(key, data, want_crc)
            reply.ok(b"")

        self.rpc.call_async(source, msg, fetched)
        return None

    # -- listing ------------------------------------------------------------

    def _h_list_local(self, r: Reader, _reply) -> bytes:
        prefix = r.str()
        names = self.meta.names(prefix)
        w = Writer().u32(len(names))
        for n in names:
            self.meta.get(n).encode(w)
        return w.finish()

    def _h_list(self, r: Reader, reply) -> None:
        prefix = r.str()
        peers = sorted(set(self.placement_view()) | {self.addr})
        merged: dict[str, FileMetadata] = {}
        left = [len(peers)]
        msg = Writer(LIST_LOCAL).str(prefix).finish()

        def got(res: Any) -> None:
            if not isinstance(res, SectorError):
                rr = Reader(res)
                for _ in range(rr.u32()):
                    m = FileMetadata.decode(rr)
                    cur = merged.get(m.name)
                    if cur is None or m.version > cur.version:
                        merged[m.name] = m
            left[0] -= 1
            if left[0] == 0:
                w = Writer().u32(len(merged))
                for n in sorted(merged):
                    merged[n].encode(w)
                reply.ok(w.finish())

        for p in peers:
            self.rpc.call_async(p, msg, got)
        return None

    # -- inventory and audit ------------------------------------------------

    def _h_inventory(self, _r: Reader, _reply) -> bytes:
        keys = sorted(self.chunks.keys())
        w = Writer().u32(len(keys))
        for k in keys:
            key_w(w, k).u32(self.chunks.crc(k))
        names = self.meta.names()
        w.u32(len(names))
        for n in names:
            self.meta.get(n).encode(w)
        return w.finish()

    def audit_round(self) -> "AuditReport":
        """One coordinator pass: gather inventories, repair metadata placement
        and replica lists, then create or drop chunk copies."""
        report = AuditReport()
        live = sorted(self.live_members())
        chunk_crcs: dict[Address, dict[ChunkKey, int]] = {}
        metas: dict[str, FileMetadata] = {}
        meta_holders: dict[str, set[Address]] = {}
        for a in live:
            try:
                r = self.rpc.call(a, Writer(INVENTORY).finish(), self.config.routing_timeout_ms * 2)
            except SectorError:
                report.unreachable.append(a)
                continue
            chunk_crcs[a] = {key_r(r): r.u32() for _ in range(r.u32())}
            for _ in range(r.u32()):
                m = FileMetadata.decode(r)
                meta_holders.setdefault(m.name, set()).add(a)
                cur = metas.get(m.name)
                if cur is None or m.version > cur.version:
                    metas[m.name] = m
        live = sorted(chunk_crcs)

        holders: dict[ChunkKey, list[Address]] = {}
        for name, meta in metas.items():
            for i in range(meta.chunk_count):
                key = ChunkKey(name, i, meta.version)
                holders[key] = [a for a in live if chunk_crcs[a].get(key) == meta.checksums[i]]
        for a in live:
            for key in chunk_crcs[a]:
                m = metas.get(key.name)
                if m is not None and key.version < m.version:
                    self._send(a, key_w(Writer(CHUNK_DROP), key).finish(), report)
                    report.garbage += 1

        load = {a: len(chunk_crcs[a]) for a in live}
        plan = replication_audit(ClusterView(live, holders, self.config.target_replicas, load))
        report.unrecoverable = plan.unrecoverable
        for act in plan:
            crc = metas[act.name].checksums[act.chunk_index]
            if self.apply_replication_action(act, report, crc):
                hs = holders[act.key]
                if act.kind is ActionKind.CREATE_REPLICA:
                    hs.append(act.target)
                else:
                    hs.remove(act.target)
                report.applied.append(act)
            else:
                report.failed.append(act)

        for name in sorted(metas):
            meta = metas[name]
            meta.replicas = [sorted(holders[ChunkKey(name, i, meta.version)])
                             for i in range(meta.chunk_count)]
            try:
                owner = self.owner_of(name)
                r = self.rpc.call(owner, meta.encode(Writer(META_SYNC).u8(1)).finish())
            except SectorError:
                report.meta_failed.append(name)
                continue
            keep = {owner, r.addr()}
            for a in sorted(meta_holders.get(name, ())):
                if a not in keep:
                    self._send(a, Writer(META_DROP).str(name).u64(meta.version).finish(), report)
        return report

    def _send(self, addr: Address, msg: bytes, report: "AuditReport") -> bool:
        try:
            self.rpc.call(addr, msg)
            return True
        except SectorError:
            report.unreachable.append(addr)
            return False

    def apply_replication_action(self, act: ReplicationAction,
                                 report: "AuditReport | None" = None,
                                 crc: int | None = None) -> bool:
        if act.kind is ActionKind.DROP_REPLICA:
            msg = key_w(Writer(CHUNK_DROP), act.key).finish()
            try:
                self.rpc.call(act.target, msg)
                return True
            except SectorError:
                return False
        if crc is None:
            try:
                r = self.rpc.call(act.source, key_w(Writer(CHUNK_GET), act.key).finish())
                crc = r.u32()
            except SectorError:
                if report is not None:
                    report.requeued.append(act)
                return False
        w = key_w(Writer(REPLICA_PUT), act.key).addr(act.source).u32(crc)
        try:
            self.rpc.call(act.target, w.finish())
            return True
        except SourceUnreachable:
            if report is not None:
                report.requeued.append(act)
            return False
        except SectorError:
            return False


@dataclass
class AuditReport:
    applied: list[ReplicationAction] = field(default_factory=list)
    failed: list[ReplicationAction] = field(default_factory=list)
    requeued: list[ReplicationAction] = field(default_factory=list)
    unreachable: list[Address] = field(default_factory=list)
    unrecoverable: list[ChunkKey] = field(default_factory=list)
    meta_failed: list[str] = field(default_factory=list)
    garbage: int = 0

    @property
    def clean(self) -> bool:
        return not (self.applied or self.failed or self.unrecoverable or self.meta_failed)


__all__ = ["AuditReport", "AuditResult", "SectorNode", "StorageConfig"]
