"""Per-node Sphere worker: runs segments, holds staged bucket output, commits it."""

from __future__ import annotations

import logging
from collections import defaultdict
from typing import Any

from ..codec import Reader, Writer
from ..errors import BadRequest, ChunkUnavailable, OwnerUnreachable, SectorError, UdfError
from ..net import Address
from ..storage import ChunkKey, ClientCtx, crc32
from .records import RecordFormat
from .udf import Engine

log = logging.getLogger(__name__)

JOB_SUBMIT = 0x40
SEG_ASSIGN = 0x41
BUCKET_PUT = 0x42
BUCKET_COMMIT = 0x43
JOB_STATUS = 0x44
JOB_CLEANUP = 0x45

WHOLE_FILE = 0xFFFFFFFF
PART = -1  # staging slot for no-shuffle output, keyed by segment


class SphereWorker:
    def __init__(self, node, engine: Engine) -> None:
        self.node = node
        self.engine = engine
        self.net = node.net
        self.addr: Address = node.addr
        self.client = ClientCtx.for_node(node)
        # (job, stage) -> bucket -> (segment, attempt) -> bytes
        self.staging: dict[tuple[int, int], dict[int, dict[tuple[int, int], bytes]]] = \
            defaultdict(lambda: defaultdict(dict))
        self.segments_run = 0
        self.records_processed = 0
        self.local_reads = 0
        self.remote_reads = 0
        node.extensions["sphere"] = self
        s = node.server
        s.register(JOB_SUBMIT, self._h_job_submit)
        s.register(SEG_ASSIGN, self._h_seg_assign)
        s.register(BUCKET_PUT, self._h_bucket_put)
        s.register(BUCKET_COMMIT, self._h_bucket_commit)
        s.register(JOB_STATUS, self._h_status)
        s.register(JOB_CLEANUP, self._h_cleanup)

    def _h_job_submit(self, r: Reader, _reply) -> bytes:
        r.u64()
        for name in r.strs():
            self.engine.get(name)
        return b""

    def _h_status(self, _r: Reader, _reply) -> bytes:
        return (Writer().u64(self.segments_run).u64(self.records_processed)
                .u64(self.local_reads).u64(self.remote_reads).finish())

    def _h_cleanup(self, r: Reader, _reply) -> bytes:
        job = r.u64()
        for key in [k for k in self.staging if k[0] == job]:
            del self.staging[key]
        return b""

    # -- segment execution --------------------------------------------------

    def _h_seg_assign(self, r: Reader, reply) -> None:
        job, stage, seg, attempt = r.u64(), r.u16(), r.u32(), r.u32()
        udf = self.engine.get(r.str())
        params = r.bytes()
        in_fmt, out_fmt = RecordFormat.decode(r.u32()), RecordFormat.decode(r.u32())
        n_buckets = r.u32()
        owners = r.addrs()
        name, version, chunk_index = r.str(), r.u64(), r.u32()
        offset, length = r.u64(), r.u64()
        chunks = []
        for _ in range(r.u32()):
            chunks.append((r.u32(), r.u32(), r.addrs()))
        blocks: dict[int, bytes] = {}
        failed: list[SectorError] = []

        def have_all() -> None:
            if failed:
                reply.error(failed[0])
                return
            data = b"".join(blocks[i] for i, _, _ in chunks)
            if chunk_index != WHOLE_FILE:
                data = data[offset:offset + length]
            self._run(job, stage, seg, attempt, udf, params, in_fmt, out_fmt, n_buckets,
                      owners, data, reply)

        left = [len(chunks)]

        def fetched_for(i: int):
            def cb(res: Any) -> None:
                if isinstance(res, SectorError):
                    failed.append(ChunkUnavailable(f"{name}#{i}: {res}"))
                else:
                    blocks[i] = res
                left[0] -= 1
                if left[0] == 0:
                    have_all()
            return cb

        if not chunks:
            self.net.call_soon(have_all)
            return None
        store = self.node.chunks
        for i, crc, reps in chunks:
            key = ChunkKey(name, i, version)
            if store.has(key):
                try:
                    block = store.get(key)
                except SectorError:
                    block = None
                if block is not None and crc32(block) == crc:
                    self.local_reads += 1
                    self.net.call_soon(fetched_for(i), block)
                    continue
            self.remote_reads += 1
            self.client.fetch_chunk_async(key, crc, [a for a in reps if a != self.addr],
                                          fetched_for(i))
        return None

    def _run(self, job, stage, seg, attempt, udf, params, in_fmt, out_fmt, n_buckets,
             owners, data, reply) -> None:
        try:
            records = in_fmt.split(data)
        except SectorError as exc:
            reply.error(exc)
            return
        try:
            pairs = udf.run(records, params)
        except Exception as exc:  # the UDF is user code
            idx = getattr(exc, "index", None)
            reply.error(UdfError(f"{udf.name} failed on record {idx}: {exc!r}", idx))
            return
        groups: dict[int, list[bytes]] = defaultdict(list)
        for b, rec in pairs:
            if n_buckets == 0:
                b = 0
            elif not 0 <= b < n_buckets:
                reply.error(UdfError(f"{udf.name} emitted bucket {b} outside [0, {n_buckets})"))
                return
            groups[b].append(rec)
        try:
            encoded = {b: out_fmt.join(recs) for b, recs in groups.items()}
        except ValueError as exc:
            reply.error(UdfError(f"{udf.name}: {exc}"))
            return
        self.segments_run += 1
        self.records_processed += len(records)
        result = Writer().u64(len(records)).u32(len(groups))
        for b in sorted(groups):
            result.u32(b).u64(len(groups[b]))
        result = result.finish()
        if n_buckets == 0:
            self.staging[(job, stage)][PART][(seg, attempt)] = encoded.get(0, b"")
            reply.ok(result)
            return
        if not encoded:
            reply.ok(result)
            return
        left = [len(encoded)]
        lost: list[Address] = []

        def put_done_for(owner: Address):
            def cb(res: Any) -> None:
                if isinstance(res, SectorError):
                    lost.append(owner)
                left[0] -= 1
                if left[0] == 0:
                    if lost:
                        reply.error(OwnerUnreachable(str(sorted(lost)[0])))
                    else:
                        reply.ok(result)
            return cb

        for b in sorted(encoded):
            owner = owners[b]
            msg = (Writer(BUCKET_PUT).u64(job).u16(stage).u32(b).u32(seg).u32(attempt)
                   .bytes(encoded[b]).finish())
            self.node.rpc.call_async(owner, msg, put_done_for(owner))

    def _h_bucket_put(self, r: Reader, _reply) -> bytes:
        job, stage, bucket, seg, attempt = r.u64(), r.u16(), r.u32(), r.u32(), r.u32()
        self.staging[(job, stage)][bucket][(seg, attempt)] = r.bytes()
        return b""

    # -- commit -------------------------------------------------------------

    def _h_bucket_commit(self, r: Reader, reply) -> None:
        job, stage = r.u64(), r.u16()
        bucket = r.u32()
        part = r.flag()
        out_name, user = r.str(), r.str()
        winners = [(r.u32(), r.u32()) for _ in range(r.u32())]
        slot = self.staging.get((job, stage), {}).get(PART if part else bucket, {})
        pieces = []
        for w in sorted(winners):
            if w not in slot:
                raise BadRequest(f"no staged output for segment {w[0]} attempt {w[1]}")
            pieces.append(slot[w])

        def uploaded(res: Any) -> None:
            if isinstance(res, SectorError):
                reply.error(res)
                return
            for w in winners:
                slot.pop(w, None)
            reply.ok(Writer().u64(res.size_bytes).finish())

        self.client.upload_async(out_name, b"".join(pieces), uploaded, user)
        return None
