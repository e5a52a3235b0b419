"""Segment planning, locality-aware assignment and bucket routing."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from ..errors import AdmissionFailed
from ..net import Address
from ..storage import FileMetadata
from .records import RecordFormat


class SegState(Enum):
    PENDING = "pending"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


@dataclass
class Segment:
    segment_id: int
    file: str
    chunk_index: int  # -1: the whole file (length-prefixed input)
    record_range: tuple[int, int] | None
    preferred_nodes: list[Address]
    offset: int = 0  # byte range inside the chunk
    length: int = 0
    state: SegState = SegState.PENDING
    worker: Address | None = None
    failures: int = 0
    attempts: int = 0


def plan_segments(metas: Sequence[FileMetadata], fmt: RecordFormat,
                  records_per_segment: int | None = None) -> list[Segment]:
    """One segment per chunk (or per ``records_per_segment`` slice of a chunk).

    Fixed-width inputs must have every chunk boundary on a record boundary.
    Length-prefixed records may straddle chunks, so each such file becomes a
    single whole-file segment.
    """
    segs: list[Segment] = []
    next_record = 0
    for meta in metas:
        if meta.chunk_count == 0:
            continue
        if not fmt.fixed:
            reps = meta.replicas[0] if meta.replicas else []
            segs.append(Segment(len(segs), meta.name, -1, None, list(reps), 0, meta.size_bytes))
            continue
        w = fmt.width
        if meta.size_bytes % w:
            raise AdmissionFailed(f"{meta.name}: size {meta.size_bytes} is not a multiple of {w}")
        if meta.chunk_count > 1 and meta.chunk_size % w:
            raise AdmissionFailed(
                f"{meta.name}: chunk size {meta.chunk_size} splits {w}-byte records")
        for i in range(meta.chunk_count):
            n = meta.chunk_len(i) // w
            step = records_per_segment or n
            for start in range(0, n, step):
                cnt = min(step, n - start)
                segs.append(Segment(len(segs), meta.name, i,
                                    (next_record + start, next_record + start + cnt),
                                    list(meta.replicas[i]), start * w, cnt * w))
            next_record += n
    return segs


@dataclass
class SchedulerState:
    segments: list[Segment]
    workers: list[Address]
    busy: dict[Address, int] = field(default_factory=dict)
    load: dict[Address, int] = field(default_factory=dict)
    local_assignments: int = 0
    remote_assignments: int = 0

    def idle(self) -> list[Address]:
        return sorted(w for w in self.workers if w not in self.busy)

    def pending(self) -> list[Segment]:
        return [s for s in self.segments if s.state is SegState.PENDING]

    def release(self, worker: Address) -> None:
        self.busy.pop(worker, None)


def assign_segment(sched: SchedulerState) -> tuple[Segment, Address] | None:
    """Pick the next (segment, worker): data-local if any idle worker holds a
    pending segment's chunk, else the least-loaded idle worker takes the
    lowest pending segment."""
    idle = sched.idle()
    pending = sched.pending()
    if not idle or not pending:
        return None
    choice = None
    for seg in pending:
        local = [w for w in idle if w in seg.preferred_nodes]
        if local:
            choice = (seg, local[0])
            sched.local_assignments += 1
            break
    if choice is None:
        worker = min(idle, key=lambda w: (sched.load.get(w, 0), w))
        choice = (pending[0], worker)
        sched.remote_assignments += 1
    seg, worker = choice
    seg.state = SegState.RUNNING
    seg.worker = worker
    seg.attempts += 1
    sched.busy[worker] = seg.segment_id
    sched.load[worker] = sched.load.get(worker, 0) + 1
    return choice


def shuffle_route(bucket_id: int, n_buckets: int, workers: Sequence[Address]) -> Address:
    if not 0 <= bucket_id < n_buckets:
        raise ValueError(f"bucket {bucket_id} outside [0, {n_buckets})")
    if not workers:
        raise ValueError("no workers to route to")
    return workers[bucket_id % len(workers)]
