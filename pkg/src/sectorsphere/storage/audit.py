"""Replica accounting: decide which chunk copies to create or drop."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

from ..errors import Unrecoverable
from ..net import Address
from .chunks import ChunkKey


class ActionKind(Enum):
    CREATE_REPLICA = "create"
    DROP_REPLICA = "drop"


class ReplicationAction(NamedTuple):
    kind: ActionKind
    name: str
    chunk_index: int
    version: int
    source: Address | None
    target: Address

    @property
    def key(self) -> ChunkKey:
        return ChunkKey(self.name, self.chunk_index, self.version)


@dataclass
class ClusterView:
    """Live nodes, where each tracked chunk currently lives, and node loads."""

    live: list[Address]
    holders: dict[ChunkKey, list[Address]]
    target_replicas: int = 3
    load: dict[Address, int] = field(default_factory=dict)


class AuditResult(list):
    """List of actions, plus the chunks that no live node holds any more."""

    def __init__(self, actions=(), unrecoverable=()) -> None:
        super().__init__(actions)
        self.unrecoverable: list[ChunkKey] = list(unrecoverable)


def replication_audit(view: ClusterView, strict: bool = False) -> AuditResult:
    """Plan CREATE/DROP actions that bring every chunk to the target count.

    New copies go to the live non-holder with the fewest chunks (ties by
    address); surplus copies are dropped from the most loaded holder. With
    ``strict`` any chunk without a live copy raises ``Unrecoverable``.
    """
    live = sorted(set(view.live))
    live_set = set(live)
    load = {a: view.load.get(a, 0) for a in live}
    for key, holders in view.holders.items():
        for h in holders:
            if h in live_set and h not in view.load:
                load[h] += 1
    actions: list[ReplicationAction] = []
    lost: list[ChunkKey] = []
    for key in sorted(view.holders):
        holders = sorted(h for h in set(view.holders[key]) if h in live_set)
        if not holders:
            lost.append(key)
            continue
        want = min(view.target_replicas, len(live))
        if len(holders) < want:
            source = min(holders, key=lambda a: (load[a], a))
            candidates = [a for a in live if a not in holders]
            for _ in range(want - len(holders)):
                tgt = min(candidates, key=lambda a: (load[a], a))
                candidates.remove(tgt)
                load[tgt] += 1
                actions.append(ReplicationAction(ActionKind.CREATE_REPLICA, key.name, key.index,
                                                 key.version, source, tgt))
        elif len(holders) > view.target_replicas:
            pool = list(holders)
            for _ in range(len(holders) - view.target_replicas):
                victim = max(pool, key=lambda a: (load[a], a))
                pool.remove(victim)
                load[victim] -= 1
                actions.append(ReplicationAction(ActionKind.DROP_REPLICA, key.name, key.index,
                                                 key.version, None, victim))
    if strict and lost:
        raise Unrecoverable(f"no live replica of {lost[0]}")
    return AuditResult(actions, lost)
