"""An in-process cluster of Sector nodes on one simulated network."""

from __future__ import annotations

import itertools
from typing import Iterable

from .net import Address, LinkProfile, SimNetwork
from .routing import oracle_successor
from .sphere import Engine, SphereWorker
from .storage import ChunkKey, ClientCtx, SectorNode, StorageConfig
from .transport import TransportConfig

LAN = LinkProfile(latency_ms=0.5)


class SimCluster:
    def __init__(self, n_nodes: int, seed: int = 0, *, m: int = 16,
                 chunk_size: int = 64 * 1024, target_replicas: int = 3,
                 profile: LinkProfile | None = None,
                 community_writers: Iterable[str] | None = None,
                 data_dir: str | None = None, transport: TransportConfig | None = None,
                 net: SimNetwork | None = None, port: int = 9000,
                 engine: Engine | None = None) -> None:
        if n_nodes < 1:
            raise ValueError("a cluster needs at least one node")
        self.net = net or SimNetwork(seed, default_profile=profile or LAN)
        self.config = StorageConfig(
            chunk_size=chunk_size, target_replicas=target_replicas, m=m,
            community_writers=set(community_writers) if community_writers is not None else None,
            transport=transport or TransportConfig(),
        )
        addrs = [Address(f"node{i}", port) for i in range(n_nodes)]
        self.nodes = [
            SectorNode(self.net, a, self.config, coordinator=addrs[0],
                       data_dir=None if data_dir is None else f"{data_dir}/node{i}")
            for i, a in enumerate(addrs)
        ]
        self.engine = engine or Engine()
        self.workers = [SphereWorker(n, self.engine) for n in self.nodes]
        self._client_ids = itertools.count()
        self.started = False

    @property
    def coordinator(self) -> SectorNode:
        return self.nodes[0]

    @property
    def live_nodes(self) -> list[SectorNode]:
        return [n for n in self.nodes if n.alive]

    @property
    def addrs(self) -> list[Address]:
        return [n.addr for n in self.live_nodes]

    def node(self, addr: Address) -> SectorNode:
        for n in self.nodes:
            if n.addr == addr:
                return n
        raise KeyError(addr)

    def start(self, max_rounds: int | None = None) -> "SimCluster":
        """Join every node through node 0, stabilize, and start heartbeats."""
        first = self.nodes[0]
        first.join(None)
        for n in self.nodes[1:]:
            n.join(first.addr)
            n.chord.stabilize_step()
            first.chord.stabilize_step()
        self.stabilize(max_rounds)
        for n in self.nodes:
            n.start_background()
        self.net.run_for(self.config.heartbeat_ms * 2.5)
        self.started = True
        return self

    def ring_consistent(self) -> bool:
        live = self.live_nodes
        ids = [n.chord.id for n in live]
        for n in live:
            want = oracle_successor(ids, n.chord.id + 1, self.config.m)
            if n.chord.successor.id != want:
                return False
        return True

    def maintenance_round(self) -> None:
        for n in self.live_nodes:
            n.maintenance_round()

    def stabilize(self, max_rounds: int | None = None) -> int:
        """Run maintenance until successors agree with the live set, then
        rebuild finger tables. Returns the number of rounds used."""
        limit = max_rounds if max_rounds is not None else 3 * len(self.nodes) + 3
        rounds = 0
        while not self.ring_consistent() and rounds < limit:
            self.maintenance_round()
            rounds += 1
        for n in self.live_nodes:
            n.chord.stabilize_step()
            n.chord.fix_all_fingers()
        return rounds

    def run_for(self, ms: float) -> None:
        self.net.run_for(ms)

    def kill(self, which: int | Address) -> SectorNode:
        node = self.nodes[which] if isinstance(which, int) else self.node(which)
        node.kill()
        return node

    def wait_dead_detected(self) -> None:
        """Let enough time pass for the coordinator to stop hearing from dead nodes."""
        cfg = self.config
        self.net.run_for(cfg.heartbeat_ms * (cfg.dead_after_misses + 1.5))

    def audit_round(self):
        return self.coordinator.audit_round()

    def client(self, user: str | None = None, servers: Iterable[Address] | None = None) -> ClientCtx:
        k = next(self._client_ids)
        ep = self.net.bind(Address(f"client{k}", 7000))
        return ClientCtx(ep, list(servers) if servers is not None else self.addrs, user,
                         self.config.chunk_size, transport=self.config.transport)

    def under_replicated(self) -> list:
        """Chunks (per current metadata) with fewer live holders than the target."""
        live = {n.addr: n for n in self.live_nodes}
        want = min(self.config.target_replicas, len(live))
        short = []
        seen: dict[str, object] = {}
        for n in live.values():
            for name in n.meta.names():
                m = n.meta.get(name)
                if name not in seen or m.version > seen[name].version:
                    seen[name] = m
        for name, meta in sorted(seen.items()):
            for i in range(meta.chunk_count):
                key = ChunkKey(name, i, meta.version)
                holders = [a for a, n in live.items() if n.chunks.has(key)]
                if len(holders) < want:
                    short.append((key, holders))
        return short


__all__ = ["LAN", "SimCluster"]
