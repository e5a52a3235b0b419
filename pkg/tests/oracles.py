"""Reference implementations the tests compare against.

Each one is deliberately naive and shares no code with the package.
"""

from __future__ import annotations

import bisect
import struct
from collections import Counter


def successor(ids, key: int, m: int) -> int:
    """First id at or after ``key`` walking clockwise on a 2^m ring."""
    ring = sorted(set(ids))
    i = bisect.bisect_left(ring, key % (1 << m))
    return ring[i % len(ring)]


def preceding_candidates(self_id: int, key: int, ids, m: int) -> list[int]:
    """Node ids strictly inside (self_id, key) clockwise."""
    size = 1 << m
    span = (key - self_id) % size
    return [n for n in ids if 0 < (n - self_id) % size < span]


def finger_targets(self_id: int, ids, m: int) -> list[int]:
    return [successor(ids, (self_id + (1 << i)) % (1 << m), m) for i in range(m)]


def jain(xs) -> float:
    xs = list(xs)
    total = sum(xs)
    sq = sum(x * x for x in xs)
    return total * total / (len(xs) * sq) if sq else 1.0


def serial_loop(records, fn) -> Counter:
    """What ``for r in D: emit fn(r)`` produces, as a multiset of records."""
    out = Counter()
    for r in records:
        for item in fn(r):
            rec = item[1] if isinstance(item, tuple) else item
            out[bytes(rec)] += 1
    return out


def sort_records(records, key_len: int = 10) -> list[bytes]:
    return sorted(records, key=lambda r: r[:key_len])


def lloyd(points: list[list[float]], init: list[list[float]], iters: int):
    """Plain-Python Lloyd: returns (centers per pass, sse per pass).

    Pass t uses the centers produced by pass t-1; the last pass only scores.
    """
    centers = [list(c) for c in init]
    k, d = len(centers), len(centers[0])
    history, sse_hist = [], []
    for t in range(iters + 1):
        history.append([list(c) for c in centers])
        sums = [[0.0] * d for _ in range(k)]
        counts = [0] * k
        sse = 0.0
        for p in points:
            best, best_d = 0, None
            for j, c in enumerate(centers):
                dist = sum((a - b) ** 2 for a, b in zip(p, c))
                if best_d is None or dist < best_d:
                    best, best_d = j, dist
            counts[best] += 1
            sse += best_d
            for i in range(d):
                sums[best][i] += p[i]
        sse_hist.append(sse)
        if t < iters:
            centers = [[s / counts[j] for s in sums[j]] if counts[j] else centers[j]
                       for j in range(k)]
    return history, sse_hist


def unpack_points(blob: bytes, d: int) -> list[list[float]]:
    n = len(blob) // (8 * d)
    flat = struct.unpack(f"<{n * d}d", blob[: n * d * 8])
    return [list(flat[i * d:(i + 1) * d]) for i in range(n)]
