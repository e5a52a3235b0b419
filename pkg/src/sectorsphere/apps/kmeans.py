"""Lloyd's k-means over stored point records, one Sphere job per iteration.

Points are little-endian float64 vectors packed back to back. Each pass
assigns points to their nearest center and emits per-center partial sums;
the driver folds those into the next set of centers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import BadDimension, KTooLarge
from ..sphere import FIXED, JobSpec, RecordStream, run_job
from ..storage import ClientCtx, FileMetadata

ASSIGN_UDF = "kmeans.assign"
DTYPE = np.dtype("<f8")
BLOCK = 1 << 15  # points per distance block; bounds memory at n*k*d scale

_HDR = struct.Struct("<II")
_PART = struct.Struct("<IQd")


def point_format(d: int):
    return FIXED(DTYPE.itemsize * d)


def encode_points(points: np.ndarray) -> bytes:
    return np.ascontiguousarray(points, dtype=DTYPE).tobytes()


def decode_points(data: bytes, d: int) -> np.ndarray:
    if len(data) % (DTYPE.itemsize * d):
        raise BadDimension(f"{len(data)} bytes is not a whole number of {d}-d points")
    return np.frombuffer(data, dtype=DTYPE).reshape(-1, d)


def gen_points(n: int, d: int = 8, clusters: int = 8, seed: int = 0,
               spread: float = 10.0) -> np.ndarray:
    """Gaussian mixture: ``clusters`` unit-variance blobs with centers in [-spread, spread]^d."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-spread, spread, size=(clusters, d))
    which = rng.integers(0, clusters, size=n)
    return centers[which] + rng.standard_normal((n, d))


def assign(points: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-center labels (lowest index on ties) and squared distances."""
    labels = np.empty(len(points), dtype=np.int64)
    dist = np.empty(len(points), dtype=np.float64)
    for lo in range(0, len(points), BLOCK):
        blk = points[lo:lo + BLOCK]
        d2 = ((blk[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        lab = d2.argmin(axis=1)
        labels[lo:lo + BLOCK] = lab
        dist[lo:lo + BLOCK] = d2[np.arange(len(blk)), lab]
    return labels, dist


def partial_sums(points: np.ndarray, centers: np.ndarray):
    """Per-center (count, coordinate sums, squared-distance sum)."""
    k, d = centers.shape
    labels, dist = assign(points, centers)
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, d))
    for j in range(d):
        sums[:, j] = np.bincount(labels, weights=points[:, j], minlength=k)
    sse = np.bincount(labels, weights=dist, minlength=k)
    return counts, sums, sse


def update_centers(centers: np.ndarray, counts: np.ndarray, sums: np.ndarray) -> np.ndarray:
    new = centers.copy()
    nz = counts > 0
    new[nz] = sums[nz] / counts[nz][:, None]
    return new


def pick_initial(n: int, k: int, seed: int, point_at) -> np.ndarray:
    """First ``k`` distinct points in a seeded permutation of ``range(n)``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise KTooLarge(f"k={k} exceeds {n} points")
    chosen: list[np.ndarray] = []
    seen: set[bytes] = set()
    for idx in np.random.default_rng(seed).permutation(n):
        p = point_at(int(idx))
        key = p.tobytes()
        if key in seen:
            continue
        seen.add(key)
        chosen.append(p)
        if len(chosen) == k:
            return np.array(chosen)
    raise KTooLarge(f"only {len(chosen)} distinct points for k={k}")


@dataclass
class KMeansModel:
    k: int
    centers: np.ndarray
    iteration: int
    inertia: float
    # centers[t] were used for pass t; inertia_history[t] is their SSE
    history: list[np.ndarray] = field(default_factory=list)
    inertia_history: list[float] = field(default_factory=list)


def kmeans_reference(points: np.ndarray, k: int, iters: int, seed: int) -> KMeansModel:
    """Single-process Lloyd iterations with the same init and update rules."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] < 1:
        raise BadDimension("points must be an (n, d) array")
    centers = pick_initial(len(points), k, seed, lambda i: points[i])
    history, inertias = [], []
    for _ in range(iters + 1):
        counts, sums, sse = partial_sums(points, centers)
        history.append(centers)
        inertias.append(float(sse.sum()))
        centers = update_centers(centers, counts, sums)
    return KMeansModel(k, history[-1], iters, inertias[-1], history, inertias)


# -- distributed ------------------------------------------------------------

def _assign_udf(records: list[bytes], params: bytes):
    k, d = _HDR.unpack_from(params)
    centers = np.frombuffer(params, dtype=DTYPE, count=k * d, offset=_HDR.size).reshape(k, d)
    n_buckets = struct.unpack_from("<I", params, _HDR.size + centers.nbytes)[0]
    pts = decode_points(b"".join(records), d)
    counts, sums, sse = partial_sums(pts, centers)
    out = []
    for j in np.nonzero(counts)[0]:
        j = int(j)
        out.append((j % n_buckets,
                    _PART.pack(j, int(counts[j]), float(sse[j])) + sums[j].astype(DTYPE).tobytes()))
    return out


def register(engine) -> None:
    if ASSIGN_UDF not in engine:
        engine.register_udf(ASSIGN_UDF, _assign_udf, batch=True, takes_params=True)


class _PointReader:
    """Random access to point ``i`` of a multi-file dataset, chunk-cached."""

    def __init__(self, client: ClientCtx, metas: Sequence[FileMetadata], d: int) -> None:
        self.client = client
        self.metas = list(metas)
        self.d = d
        self.width = DTYPE.itemsize * d
        self.starts = []
        total = 0
        for m in self.metas:
            self.starts.append(total)
            total += m.size_bytes // self.width
        self.n = total
        self._cache: dict[tuple[int, int], bytes] = {}

    def _chunk(self, f: int, i: int) -> bytes:
        key = (f, i)
        if key not in self._cache:
            self._cache[key] = self.client.fetch_chunk(self.metas[f], i)
        return self._cache[key]

    def __call__(self, idx: int) -> np.ndarray:
        f = max(j for j, s in enumerate(self.starts) if s <= idx and self.metas[j].size_bytes)
        meta = self.metas[f]
        off = (idx - self.starts[f]) * self.width
        cs = meta.chunk_size
        buf = b""
        while len(buf) < self.width:
            pos = off + len(buf)
            block = self._chunk(f, pos // cs)
            buf += block[pos % cs:pos % cs + self.width - len(buf)]
        return np.frombuffer(buf, dtype=DTYPE).copy()


def upload_points(client: ClientCtx, points: np.ndarray, name: str = "kmeans/points",
                  files: int = 1) -> RecordStream:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise BadDimension("points must be an (n, d) array")
    width = DTYPE.itemsize * points.shape[1]
    csize = max(width, client.chunk_size // width * width)
    names = []
    for f, part in enumerate(np.array_split(points, files)):
        fname = name if files == 1 else f"{name}/part_{f}"
        client.upload(fname, encode_points(part), chunk_size=csize)
        names.append(fname)
    return RecordStream(names, point_format(points.shape[1]), len(points))


def kmeans_run(client: ClientCtx, points: RecordStream, k: int, iters: int, seed: int,
               n_buckets: int | None = None, workers=None,
               output_name: str = "kmeans/pass") -> KMeansModel:
    """Distributed Lloyd's algorithm over ``points``; iterations are synchronous."""
    width = points.record_format.width
    if width is None or width % DTYPE.itemsize:
        raise BadDimension("points must be fixed-width float64 vectors")
    d = width // DTYPE.itemsize
    metas = [client.stat(n) for n in points.dataset]
    for m in metas:
        if m.size_bytes % width:
            raise BadDimension(f"{m.name}: {m.size_bytes} bytes is not a whole number of {d}-d points")
    reader = _PointReader(client, metas, d)
    centers = pick_initial(reader.n, k, seed, reader)
    reader._cache.clear()
    if n_buckets is None:
        n_buckets = max(1, min(k, len(workers) if workers else len(client.members())))
    history, inertias = [], []
    for t in range(iters + 1):
        params = (_HDR.pack(k, d) + centers.astype(DTYPE).tobytes()
                  + struct.pack("<I", n_buckets))
        spec = JobSpec(RecordStream(list(points.dataset), points.record_format, points.total_records),
                       ASSIGN_UDF, n_buckets, params=params, output_name=f"{output_name}{t}",
                       output_format=FIXED(_PART.size + DTYPE.itemsize * d))
        outs = run_job(client, spec, workers)
        counts = np.zeros(k, dtype=np.int64)
        sums = np.zeros((k, d))
        sse = 0.0
        for name in outs:
            data = client.download(name)
            client.delete(name)
            rec = _PART.size + DTYPE.itemsize * d
            for off in range(0, len(data), rec):
                j, cnt, s = _PART.unpack_from(data, off)
                counts[j] += cnt
                sums[j] += np.frombuffer(data, dtype=DTYPE, count=d, offset=off + _PART.size)
                sse += s
        history.append(centers)
        inertias.append(sse)
        centers = update_centers(centers, counts, sums)
    return KMeansModel(k, history[-1], iters, inertias[-1], history, inertias)
