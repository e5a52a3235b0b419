"""Distributed sort of 100-byte records keyed by their first 10 bytes.

Stage one range-partitions records by the leading two key bytes; stage two
sorts each partition on whichever node owns it. Reading the final buckets in
index order yields the globally sorted dataset.
"""

from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

from ..sphere import FIXED, LENGTH_PREFIXED, Engine, JobSpec, RecordStream, Stage, run_job
from ..storage import ClientCtx

RECORD_SIZE = 100
KEY_SIZE = 10
TERA = FIXED(RECORD_SIZE)

PARTITION_UDF = "terasort.partition"
SORT_UDF = "terasort.sort"

_U32 = struct.Struct(">I")
_MASK = (1 << 64) - 1


def key_bucket(key: bytes, n_buckets: int) -> int:
    """Bucket k covers the k-th equal slice of the 16-bit key prefix space."""
    return ((key[0] << 8) | key[1]) * n_buckets >> 16


def gen_records(n: int, seed: int, start: int = 0) -> bytes:
    """``n`` records with uniform random keys; payload is the row id plus filler."""
    if n < 0:
        raise ValueError("record count must be >= 0")
    keys = random.Random(seed).randbytes(KEY_SIZE * n)
    out = bytearray()
    for i in range(n):
        row = start + i
        out += keys[i * KEY_SIZE:(i + 1) * KEY_SIZE]
        out += b"%032X" % row
        out += bytes((0x41 + (row + j) % 26 for j in range(8))) * 7
        out += b"\r\n"
    return bytes(out)


def split_records(data: bytes) -> list[bytes]:
    return TERA.split(data)


def teragen(client: ClientCtx, n: int, seed: int, name: str = "tera/input",
            files: int = 1) -> RecordStream:
    """Write ``n`` records spread over ``files`` storage files.

    Chunks are cut on record boundaries so every chunk is a whole segment.
    """
    if files < 1:
        raise ValueError("need at least one file")
    csize = max(RECORD_SIZE, client.chunk_size // RECORD_SIZE * RECORD_SIZE)
    names = []
    per, extra = divmod(n, files)
    row = 0
    for f in range(files):
        cnt = per + (f < extra)
        fname = name if files == 1 else f"{name}/part_{f}"
        data = gen_records(cnt, seed if files == 1 else seed * 1_000_003 + f, row)
        client.upload(fname, data, chunk_size=csize)
        names.append(fname)
        row += cnt
    return RecordStream(names, TERA, n)


def _partition(records: list[bytes], params: bytes) -> Iterable[tuple[int, bytes]]:
    (n,) = _U32.unpack(params)
    return [(key_bucket(r, n), r) for r in records]


def _sort(records: list[bytes], params: bytes) -> Iterable[tuple[int, bytes]]:
    (n,) = _U32.unpack(params)
    return [(key_bucket(r, n), r) for r in sorted(records, key=lambda r: r[:KEY_SIZE])]


def register(engine: Engine) -> None:
    if PARTITION_UDF not in engine:
        engine.register_udf(PARTITION_UDF, _partition, batch=True, takes_params=True)
    if SORT_UDF not in engine:
        engine.register_udf(SORT_UDF, _sort, batch=True, takes_params=True)


def terasort(client: ClientCtx, dataset: RecordStream, n_buckets: int,
             output_name: str = "tera/sorted", workers=None) -> list[str]:
    """Sort ``dataset``; returns the output files in key order.

    The partition stage writes length-prefixed buckets so that the sort stage
    sees each partition whole, as a single segment.
    """
    if n_buckets < 1:
        raise ValueError("n_buckets must be >= 1")
    params = _U32.pack(n_buckets)
    spec = JobSpec(
        input=RecordStream(list(dataset.dataset), TERA, dataset.total_records),
        stage_list=[
            Stage(PARTITION_UDF, n_buckets, params, LENGTH_PREFIXED),
            Stage(SORT_UDF, n_buckets, params, TERA),
        ],
        output_name=output_name,
    )
    return run_job(client, spec, workers)


def key_hash(key: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big")


def keyspace_checksum(records: Iterable[bytes]) -> int:
    """Order-independent: the sum of per-key hashes, mod 2**64."""
    total = 0
    for r in records:
        total = (total + key_hash(r[:KEY_SIZE])) & _MASK
    return total


@dataclass(frozen=True)
class VerifyReport:
    ok: bool
    record_count: int
    keyspace_checksum: int


def verify_records(records: Sequence[bytes]) -> VerifyReport:
    ok = all(records[i - 1][:KEY_SIZE] <= records[i][:KEY_SIZE] for i in range(1, len(records)))
    return VerifyReport(ok, len(records), keyspace_checksum(records))


def verify_sorted(client: ClientCtx, files: Sequence[str]) -> VerifyReport:
    """Check the concatenation of ``files`` is key-ordered and checksum it."""
    records: list[bytes] = []
    for name in files:
        records.extend(split_records(client.download(name)))
    return verify_records(records)


def dataset_checksum(client: ClientCtx, dataset: RecordStream) -> VerifyReport:
    return verify_sorted(client, dataset.dataset)
