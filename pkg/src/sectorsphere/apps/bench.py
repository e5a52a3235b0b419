"""Benchmark drivers: build a simulated cluster from a config, run, report a row.

Reported ``seconds`` are virtual (simulated) seconds, which keeps reports
byte-identical for a fixed seed and config.
"""

from __future__ import annotations

from dataclasses import replace

from ..config import ClusterConfig, llpr_rtts
from . import kmeans as km
from . import terasort as ts
from .llpr import llpr_sweep
from .report import COLUMNS, csv_text


def bench_terasort(cfg: ClusterConfig, records: int | None = None, nodes: int | None = None,
                   seed: int | None = None, n_buckets: int | None = None) -> dict:
    cfg = replace(cfg, nodes=nodes or cfg.nodes, seed=cfg.seed if seed is None else seed)
    p = cfg.params["terasort"]
    records = p["records"] if records is None else records
    n_buckets = n_buckets or p["buckets"] or cfg.nodes
    cluster = cfg.sim_cluster().start()
    ts.register(cluster.engine)
    client = cluster.client(cfg.user)
    dataset = ts.teragen(client, records, cfg.seed, files=cfg.nodes)
    before = ts.dataset_checksum(client, dataset)
    t0 = cluster.net.now
    outputs = ts.terasort(client, dataset, n_buckets)
    seconds = (cluster.net.now - t0) / 1000.0
    after = ts.verify_sorted(client, outputs)
    ok = (after.ok and after.record_count == before.record_count
          and after.keyspace_checksum == before.keyspace_checksum)
    return {"nodes": cfg.nodes, "records": records, "seconds": seconds, "ok": ok}


def bench_kmeans(cfg: ClusterConfig, records: int | None = None, k: int | None = None,
                 iters: int | None = None, seed: int | None = None) -> dict:
    p = cfg.params["kmeans"]
    records = p["records"] if records is None else records
    k = p["k"] if k is None else k
    iters = p["iters"] if iters is None else iters
    seed = cfg.seed if seed is None else seed
    cluster = cfg.sim_cluster().start()
    km.register(cluster.engine)
    client = cluster.client(cfg.user)
    points = km.gen_points(records, p["d"], clusters=k, seed=seed)
    dataset = km.upload_points(client, points, files=cfg.nodes)
    t0 = cluster.net.now
    model = km.kmeans_run(client, dataset, k, iters, seed)
    seconds = (cluster.net.now - t0) / 1000.0
    return {"records": records, "k": k, "iters": iters, "seconds": seconds,
            "inertia": model.inertia}


def bench_llpr(cfg: ClusterConfig, rtts: list[float] | None = None, loss: float | None = None,
               size_bytes: int | None = None) -> list[dict]:
    p = cfg.params["llpr"]
    return llpr_sweep(
        rtts if rtts is not None else llpr_rtts(cfg),
        loss=p["loss"] if loss is None else loss,
        size_bytes=p["size_bytes"] if size_bytes is None else size_bytes,
        bandwidth_bps=p["bandwidth_bps"], seed=cfg.seed,
        queue_bytes=cfg.default_profile.queue_bytes,
    )


def run_sim(cfg: ClusterConfig) -> dict[str, list[dict]]:
    """Report rows for every configured workload, keyed by workload name."""
    out = {}
    for w in cfg.workloads:
        if w == "terasort":
            out[w] = [bench_terasort(cfg)]
        elif w == "kmeans":
            out[w] = [bench_kmeans(cfg)]
        else:
            out[w] = bench_llpr(cfg)
    return out


def sim_reports(cfg: ClusterConfig) -> dict[str, str]:
    return {w: csv_text(rows, COLUMNS[w]) for w, rows in run_sim(cfg).items()}
