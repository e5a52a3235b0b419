"""Job coordinator: lives with the submitting client and drives workers by RPC.

Segment dispatch is callback driven; stage barriers, commits and input
lookups happen in the caller's ``wait``/``poll`` loop so nothing blocks
inside a network callback.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

from ..codec import Reader, Writer
from ..errors import (
    AdmissionFailed,
    JobAborted,
    JobNotDone,
    NotFound,
    OwnerUnreachable,
    PeerDown,
    SectorError,
    UnknownInput,
    Unreachable,
)
from ..net import Address
from ..storage import ClientCtx, FileMetadata
from .plan import SchedulerState, Segment, SegState, assign_segment, plan_segments, shuffle_route
from .records import LENGTH_PREFIXED, RecordFormat, RecordStream
from .worker import BUCKET_COMMIT, JOB_CLEANUP, JOB_SUBMIT, SEG_ASSIGN, WHOLE_FILE

log = logging.getLogger(__name__)

MAX_BUCKETS_PER_NODE = 64
COMMIT_TRIES = 20
COMMIT_RETRY_MS = 500.0
_job_ids = itertools.count(1)


@dataclass
class Stage:
    udf: str
    n_buckets: int = 0
    params: bytes = b""
    output_format: RecordFormat = LENGTH_PREFIXED


@dataclass
class JobSpec:
    input: RecordStream
    udf_name: str | None = None
    n_buckets: int = 0
    stage_list: list[Stage] | None = None
    output_name: str = "output"
    params: bytes = b""
    output_format: RecordFormat = LENGTH_PREFIXED
    records_per_segment: int | None = None
    max_retries: int = 3
    segment_timeout_ms: float = 600_000.0
    keep_intermediate: bool = False

    def stages(self) -> list[Stage]:
        if self.stage_list:
            return list(self.stage_list)
        if self.udf_name is None:
            raise AdmissionFailed("job names no UDF")
        return [Stage(self.udf_name, self.n_buckets, self.params, self.output_format)]


@dataclass
class _SegResult:
    attempt: int
    worker: Address
    records: int
    buckets: dict[int, int]


@dataclass
class JobStats:
    segments_done: int = 0
    segments_total: int = 0
    records_processed: int = 0
    failures: int = 0
    reruns: int = 0
    reassigned_buckets: int = 0
    local_assignments: int = 0
    remote_assignments: int = 0
    outputs_per_stage: list[list[str]] = field(default_factory=list)


class JobHandle:
    def __init__(self, client: ClientCtx, spec: JobSpec, workers: Sequence[Address]) -> None:
        self.client = client
        self.net = client.net
        self.spec = spec
        self.job_id = next(_job_ids)
        self.stages = spec.stages()
        self.workers = sorted(workers)
        self.all_workers = list(self.workers)
        self.state = "running"
        self.error: SectorError | None = None
        self.outputs: list[str] = []
        self.stats = JobStats()
        self.stage_index = -1
        self._inputs: list[str] = list(spec.input.dataset)
        self._input_format = spec.input.record_format
        self._commit_pending = 0
        self._phase = "exec"

    # -- public -------------------------------------------------------------

    @property
    def done(self) -> bool:
        return self.state != "running"

    def progress(self) -> tuple[int, int, int]:
        s = self.stats
        return s.segments_done, s.segments_total, s.records_processed

    def poll(self, duration_ms: float) -> bool:
        """Advance the job for up to ``duration_ms`` of network time."""
        deadline = self.net.now + duration_ms
        while not self.done and self.net.now < deadline:
            self.net.run_until(self._needs_driver, deadline - self.net.now)
            if self._needs_driver():
                self._drive()
            elif self._stalled():
                self._abort(JobAborted("job stalled: no live workers or pending events"))
        return self.done

    def wait(self) -> "JobHandle":
        while not self.done:
            self.net.run_until(self._needs_driver)
            if self._needs_driver():
                self._drive()
            elif self._stalled():
                self._abort(JobAborted("job stalled: no live workers or pending events"))
        if self.error is not None:
            raise self.error
        return self

    def _stalled(self) -> bool:
        nxt = getattr(self.net, "next_event_time", None)
        return nxt is not None and nxt() is None

    # -- stage driver -------------------------------------------------------

    def _needs_driver(self) -> bool:
        if self.done or self.stage_index < 0 or self._phase == "committed":
            return True
        if self._phase == "committing":
            return False
        return all(s.state is SegState.DONE for s in self.segments)

    def _drive(self) -> None:
        if self.done:
            return
        if self.stage_index < 0:
            self._start_stage(0)
        elif self._phase == "committed":
            self._finish_stage()
        else:
            self._commit_stage()

    def _start_stage(self, s: int) -> None:
        self.stage_index = s
        stage = self.stages[s]
        metas: list[FileMetadata] = []
        for name in self._inputs:
            try:
                metas.append(self.client.stat(name))
            except NotFound:
                self._abort(UnknownInput(name))
                return
            except SectorError as exc:
                self._abort(exc)
                return
        self.metas = {m.name: m for m in metas}
        try:
            self.segments = plan_segments(metas, self._input_format, self.spec.records_per_segment)
        except SectorError as exc:
            self._abort(exc)
            return
        self.stats.segments_total += len(self.segments)
        self.sched = SchedulerState(self.segments, list(self.workers))
        self.n_buckets = stage.n_buckets
        self.owners = [shuffle_route(k, stage.n_buckets, self.workers) for k in range(stage.n_buckets)]
        self.results: dict[int, _SegResult] = {}
        self.committed: set[int] = set()
        self._phase = "exec"
        self._pump()

    def _out_name(self, slot: int) -> str:
        base = self.spec.output_name
        last = self.stage_index == len(self.stages) - 1
        kind = "bucket" if self.n_buckets else "part"
        if last:
            return f"{base}/{kind}_{slot}"
        return f"{base}/_stage{self.stage_index}/{kind}_{slot}"

    def _commit_stage(self) -> None:
        """Ask every bucket owner to write its winners' output back to storage."""
        plan: list[tuple[int, Address, bool, list[tuple[int, int]]]] = []
        if self.n_buckets:
            for k in range(self.n_buckets):
                if k in self.committed:
                    continue
                winners = [(sid, r.attempt) for sid, r in sorted(self.results.items())
                           if r.buckets.get(k)]
                plan.append((k, self.owners[k], False, winners))
        else:
            for sid, r in sorted(self.results.items()):
                if sid not in self.committed:
                    plan.append((sid, r.worker, True, [(sid, r.attempt)]))
        if not plan:
            self._finish_stage()
            return
        self._phase = "committing"
        self._commit_pending = len(plan)
        user = self.client.user or ""
        for slot, owner, part, winners in plan:
            w = (Writer(BUCKET_COMMIT).u64(self.job_id).u16(self.stage_index).u32(slot)
                 .flag(part).str(self._out_name(slot)).str(user).u32(len(winners)))
            for sid, att in winners:
                w.u32(sid).u32(att)
            self._send_commit(owner, w.finish(), slot, 0)

    def _send_commit(self, owner: Address, msg: bytes, slot: int, tries: int) -> None:
        self.client.rpc.call_async(owner, msg, self._committed(slot, owner, msg, tries),
                                   self.spec.segment_timeout_ms)

    def _committed(self, slot: int, owner: Address, msg: bytes, tries: int):
        stage_at_send = self.stage_index

        def cb(res: Any) -> None:
            if self.done or self.stage_index != stage_at_send:
                return
            if isinstance(res, Unreachable) and not isinstance(res, PeerDown) and tries + 1 < COMMIT_TRIES:
                # the owner is up but storage is briefly unreachable from it
                # (ring still healing); try the same commit again shortly
                self.net.call_later(COMMIT_RETRY_MS, self._send_commit, owner, msg, slot, tries + 1)
                return
            self._commit_pending -= 1
            if isinstance(res, PeerDown):
                self.handle_worker_failure(owner)
            elif isinstance(res, SectorError):
                self._abort(JobAborted(f"commit of {self._out_name(slot)} failed: {res}"))
                return
            else:
                self.committed.add(slot)
            if self._commit_pending == 0:
                self._phase = "committed" if self._stage_complete() else "exec"
                self._pump()
        return cb

    def _stage_complete(self) -> bool:
        if self.n_buckets:
            return len(self.committed) == self.n_buckets
        return all(s.segment_id in self.committed for s in self.segments)

    def _finish_stage(self) -> None:
        if self.n_buckets:
            names = [self._out_name(k) for k in range(self.n_buckets)]
        else:
            names = [self._out_name(s.segment_id) for s in self.segments]
        self.stats.outputs_per_stage.append(names)
        stage = self.stages[self.stage_index]
        if self.stage_index + 1 < len(self.stages):
            self._inputs = names
            self._input_format = stage.output_format
            self._start_stage(self.stage_index + 1)
            return
        self.outputs = names
        self.state = "done"
        self._cleanup()

    def _cleanup(self) -> None:
        msg = Writer(JOB_CLEANUP).u64(self.job_id).finish()
        for w in self.all_workers:
            self.client.rpc.call_async(w, msg, lambda _res: None)
        if not self.spec.keep_intermediate:
            for names in self.stats.outputs_per_stage[:-1]:
                for n in names:
                    try:
                        self.client.delete(n)
                    except SectorError:
                        pass

    # -- dispatch -----------------------------------------------------------

    def _pump(self) -> None:
        if self.done:
            return
        while True:
            pick = assign_segment(self.sched)
            if pick is None:
                break
            seg, worker = pick
            self._send(seg, worker)
        self.stats.local_assignments = self.sched.local_assignments
        self.stats.remote_assignments = self.sched.remote_assignments

    def _send(self, seg: Segment, worker: Address) -> None:
        stage = self.stages[self.stage_index]
        meta = self.metas[seg.file]
        w = (Writer(SEG_ASSIGN).u64(self.job_id).u16(self.stage_index).u32(seg.segment_id)
             .u32(seg.attempts).str(stage.udf).bytes(stage.params)
             .u32(self._input_format.encode()).u32(stage.output_format.encode())
             .u32(stage.n_buckets).addrs(self.owners)
             .str(meta.name).u64(meta.version)
             .u32(WHOLE_FILE if seg.chunk_index < 0 else seg.chunk_index)
             .u64(seg.offset).u64(seg.length))
        idx = range(meta.chunk_count) if seg.chunk_index < 0 else [seg.chunk_index]
        w.u32(len(idx))
        for i in idx:
            w.u32(i).u32(meta.checksums[i]).addrs(meta.replicas[i])
        self.client.rpc.call_async(worker, w.finish(), self._on_result(seg, worker, seg.attempts),
                                   self.spec.segment_timeout_ms)

    def _on_result(self, seg: Segment, worker: Address, attempt: int):
        stage_at_send = self.stage_index

        def cb(res: Any) -> None:
            if self.done or self.stage_index != stage_at_send:
                return
            if seg.state is not SegState.RUNNING or seg.worker != worker or seg.attempts != attempt:
                return  # superseded
            self.sched.release(worker)
            if isinstance(res, PeerDown):
                self.handle_worker_failure(worker)
            elif isinstance(res, OwnerUnreachable):
                seg.state = SegState.PENDING
                seg.worker = None
                try:
                    self.handle_worker_failure(Address.parse(str(res)))
                except ValueError:
                    pass
            elif isinstance(res, SectorError):
                self._seg_failed(seg, res)
            else:
                r = Reader(res)
                records = r.u64()
                buckets = {r.u32(): r.u64() for _ in range(r.u32())}
                first = seg.segment_id not in self.results
                self.results[seg.segment_id] = _SegResult(attempt, worker, records, buckets)
                seg.state = SegState.DONE
                if first:
                    self.stats.segments_done += 1
                    self.stats.records_processed += records
            self._pump()
        return cb

    def _seg_failed(self, seg: Segment, exc: SectorError) -> None:
        seg.failures += 1
        self.stats.failures += 1
        seg.worker = None
        if seg.failures > self.spec.max_retries:
            seg.state = SegState.FAILED
            self._abort(JobAborted(f"segment {seg.segment_id} failed {seg.failures} times: {exc}"))
        else:
            seg.state = SegState.PENDING

    # -- failures -----------------------------------------------------------

    def handle_worker_failure(self, worker: Address) -> list[Segment]:
        """Drop ``worker``; requeue what it was running and re-run segments
        whose committed output it held. Returns the segments requeued."""
        if worker not in self.workers:
            return []
        self.workers.remove(worker)
        self.sched.workers = list(self.workers)
        self.sched.release(worker)
        requeued: list[Segment] = []
        if not self.workers:
            self._abort(JobAborted("no live workers remain"))
            return requeued
        for seg in self.segments:
            if seg.state is SegState.RUNNING and seg.worker == worker:
                requeued.append(seg)
                self._seg_failed(seg, SectorError(f"worker {worker} died"))
                if self.done:
                    return requeued
        orphaned = [k for k, o in enumerate(self.owners) if o == worker and k not in self.committed]
        for k in orphaned:
            self.owners[k] = shuffle_route(k, self.n_buckets, self.workers)
        self.stats.reassigned_buckets += len(orphaned)
        for seg in self.segments:
            if seg.state is not SegState.DONE:
                continue
            r = self.results.get(seg.segment_id)
            if r is None:
                continue
            lost = any(r.buckets.get(k) for k in orphaned) or (
                not self.n_buckets and r.worker == worker and seg.segment_id not in self.committed)
            if lost:
                seg.state = SegState.PENDING
                seg.worker = None
                self.stats.reruns += 1
                requeued.append(seg)
        return requeued

    def _abort(self, exc: SectorError) -> None:
        if self.done:
            return
        self.state = "aborted"
        self.error = exc


def submit_job(client: ClientCtx, spec: JobSpec, workers: Sequence[Address] | None = None) -> JobHandle:
    """Admit ``spec`` (UDFs known everywhere, inputs exist) and return a handle.
    The job advances when the handle is polled or waited on."""
    if workers is None:
        workers = client.members()
    workers = sorted(workers)
    if not workers:
        raise AdmissionFailed("no workers")
    stages = spec.stages()
    for st in stages:
        if st.n_buckets < 0:
            raise AdmissionFailed("n_buckets must be >= 0")
        if st.n_buckets > len(workers) * MAX_BUCKETS_PER_NODE:
            raise AdmissionFailed(f"{st.n_buckets} buckets exceeds {MAX_BUCKETS_PER_NODE} per node")
    for name in spec.input.dataset:
        try:
            client.stat(name)
        except NotFound:
            raise UnknownInput(name) from None
    handle = JobHandle(client, spec, workers)
    msg = Writer(JOB_SUBMIT).u64(handle.job_id).strs(sorted({s.udf for s in stages})).finish()
    live = []
    for w in workers:
        try:
            client.rpc.call(w, msg)
            live.append(w)
        except Unreachable:
            continue
    if not live:
        raise AdmissionFailed("no reachable workers")
    handle.workers = live
    handle.all_workers = list(live)
    return handle


def job_collect(handle: JobHandle) -> list[str]:
    if handle.state == "aborted":
        raise handle.error
    if not handle.done:
        raise JobNotDone(f"job {handle.job_id} is still running")
    return list(handle.outputs)


def run_job(client: ClientCtx, spec: JobSpec, workers: Sequence[Address] | None = None) -> list[str]:
    return job_collect(submit_job(client, spec, workers).wait())


def read_output(client: ClientCtx, names: Sequence[str], fmt: RecordFormat) -> list[bytes]:
    out: list[bytes] = []
    for n in names:
        out.extend(fmt.split(client.download(n)))
    return out
