"""Operator command line.

Without ``--servers`` every command runs against an in-process simulated
cluster whose chunks and metadata live under the data directory, so files
survive between invocations. With ``--servers`` commands talk UDP to nodes
started with ``node start``.
"""

from __future__ import annotations

import argparse
import contextlib
import importlib
import io
import os
import sys
import zlib
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from . import errors as E
from .config import ClusterConfig, ConfigError, load_config
from .net import Address

DEFAULT_DATA_DIR = ".sectorsphere"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_LOCAL_IO = 8
EXIT_VERIFY = 20
EXIT_INTERNAL = 70

# most specific class first
_ERROR_EXITS: list[tuple[type[BaseException], int]] = [
    (E.NotFound, 4),
    (E.AccessDenied, 5),
    (E.NameConflict, 6),
    (E.Unreachable, 7),
    (E.NotEnoughNodes, 9),
    (E.ChunkCorrupt, 10),
    (E.AllReplicasDown, 11),
    (E.UnknownUdf, 12),
    (E.UnknownInput, 13),
    (E.AdmissionFailed, 14),
    (E.JobAborted, 15),
    (E.UdfError, 16),
    (E.BadDimension, 17),
    (E.KTooLarge, 18),
    (E.SectorError, 19),
    (ConfigError, EXIT_CONFIG),
    (OSError, EXIT_LOCAL_IO),
]


def exit_code_for(exc: BaseException) -> int:
    for cls, code in _ERROR_EXITS:
        if isinstance(exc, cls):
            return code
    return EXIT_INTERNAL


class VerifyFailed(Exception):
    pass


# -- built-in UDFs for `job run` ---------------------------------------------

def _identity(rec: bytes):
    return [rec]


def _reverse(rec: bytes):
    return [rec[::-1]]


def _upper(rec: bytes):
    return [rec.upper()]


def _hashed(rec: bytes, params: bytes):
    n = int.from_bytes(params[:4], "big") or 1
    return [(zlib.crc32(rec) % n, rec)]


BUILTIN_UDFS: dict[str, tuple[Callable, bool]] = {
    "identity": (_identity, False),
    "reverse": (_reverse, False),
    "upper": (_upper, False),
    "hash": (_hashed, True),
}


def _resolve_udf(spec: str) -> tuple[str, Callable, bool]:
    if spec in BUILTIN_UDFS:
        fn, takes = BUILTIN_UDFS[spec]
        return spec, fn, takes
    if ":" not in spec:
        raise E.UnknownUdf(f"{spec} (built-ins: {', '.join(sorted(BUILTIN_UDFS))}; "
                           "or module:function)")
    mod, _, attr = spec.partition(":")
    try:
        fn = getattr(importlib.import_module(mod), attr)
    except (ImportError, AttributeError) as exc:
        raise E.UnknownUdf(f"{spec}: {exc}") from None
    return spec, fn, False


# -- sessions ---------------------------------------------------------------

class _Session:
    """A client plus whatever backs it (simulated cluster or UDP network)."""

    def __init__(self, cfg: ClusterConfig, args) -> None:
        self.cfg = cfg
        self.user = args.user or cfg.user
        servers = _parse_servers(args.servers) if args.servers else cfg.servers
        self.cluster = None
        if servers:
            from .storage import ClientCtx
            from .udp import UdpNetwork
            net = UdpNetwork()
            ep = net.bind(Address(args.bind_host, 0))
            self.client = ClientCtx(ep, servers, self.user, cfg.chunk_size,
                                    transport=cfg.transport)
            self.engine = None
        else:
            data_dir = args.data_dir or cfg.data_dir or DEFAULT_DATA_DIR
            os.makedirs(data_dir, exist_ok=True)
            self.cluster = cfg.sim_cluster(data_dir=data_dir).start()
            self.client = self.cluster.client(self.user)
            self.engine = self.cluster.engine


def _parse_servers(text: str) -> list[Address]:
    try:
        return [Address.parse(s.strip()) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--servers: {exc}") from None


def _config(args) -> ClusterConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


# -- commands ---------------------------------------------------------------

def cmd_up(args, out) -> int:
    with open(args.local, "rb") as fh:
        data = fh.read()
    s = _Session(_config(args), args)
    meta = s.client.upload(args.name, data)
    print(f"{meta.name}\t{meta.size_bytes}\t{meta.chunk_count}", file=out)
    return EXIT_OK


def cmd_down(args, out) -> int:
    s = _Session(_config(args), args)
    data = s.client.download(args.name)
    with open(args.local, "wb") as fh:
        fh.write(data)
    print(f"{args.name}\t{len(data)}", file=out)
    return EXIT_OK


def cmd_ls(args, out) -> int:
    s = _Session(_config(args), args)
    metas = sorted(s.client.list_files(args.prefix), key=lambda m: m.name)
    rows = [("NAME", "SIZE", "CHUNKS", "REPLICAS", "OWNER", "VERSION")]
    for m in metas:
        reps = min((len(r) for r in m.replicas), default=0)
        rows.append((m.name, str(m.size_bytes), str(m.chunk_count), str(reps), m.owner,
                     str(m.version)))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip(), file=out)
    return EXIT_OK


def cmd_rm(args, out) -> int:
    s = _Session(_config(args), args)
    s.client.delete(args.name)
    return EXIT_OK


def cmd_job_run(args, out) -> int:
    from .sphere import FIXED, LENGTH_PREFIXED, JobSpec, RecordStream, run_job
    s = _Session(_config(args), args)
    if s.engine is None:
        raise E.AdmissionFailed("job run needs the simulated cluster (UDFs live in-process)")
    name, fn, takes = _resolve_udf(args.udf)
    if name not in s.engine:
        s.engine.register_udf(name, fn, takes_params=takes)
    fmt = FIXED(args.record_size) if args.record_size else LENGTH_PREFIXED
    spec = JobSpec(RecordStream(list(args.input), fmt), name, args.buckets,
                   params=args.buckets.to_bytes(4, "big"), output_name=args.output,
                   output_format=fmt)
    for o in run_job(s.client, spec):
        print(o, file=out)
    return EXIT_OK


def cmd_node_start(args, out, err) -> int:
    from .sphere import Engine, SphereWorker
    from .storage import SectorNode, StorageConfig
    from .udp import UdpNetwork
    cfg = _config(args)
    addr = Address.parse(args.listen)
    join = Address.parse(args.join) if args.join else None
    coordinator = Address.parse(args.coordinator) if args.coordinator else (join or addr)
    net = UdpNetwork()
    node = SectorNode(net, addr, StorageConfig(chunk_size=cfg.chunk_size,
                                               target_replicas=cfg.target_replicas,
                                               m=cfg.m_bits, transport=cfg.transport),
                      coordinator=coordinator, data_dir=args.data_dir or cfg.data_dir)
    engine = Engine()
    for n, (fn, takes) in BUILTIN_UDFS.items():
        engine.register_udf(n, fn, takes_params=takes)
    SphereWorker(node, engine)
    node.join(join)
    node.start_background()
    print(f"node {addr} up (coordinator {coordinator})", file=err)
    err.flush()
    try:
        if args.run_for is not None:
            net.run_for(args.run_for * 1000.0)
        else:
            net.run_until(lambda: not node.alive)
    except KeyboardInterrupt:
        pass
    node.kill()
    return EXIT_OK


def cmd_bench(args, out) -> int:
    from .apps import COLUMNS, bench_kmeans, bench_llpr, bench_terasort, write_csv
    cfg = _config(args)
    if args.nodes is not None:
        if args.nodes < 1:
            raise ConfigError("--nodes must be >= 1")
        cfg = replace(cfg, nodes=args.nodes)
    if args.workload == "terasort":
        rows = [bench_terasort(cfg, records=args.records, n_buckets=args.buckets)]
    elif args.workload == "kmeans":
        rows = [bench_kmeans(cfg, records=args.records, k=args.k, iters=args.iters)]
    else:
        rtts = None
        if args.rtts:
            try:
                rtts = [float(x) for x in args.rtts.split(",")]
            except ValueError:
                raise ConfigError(f"--rtts: bad list {args.rtts!r}") from None
        rows = bench_llpr(cfg, rtts=rtts, loss=args.loss, size_bytes=args.size_bytes)
    write_csv(rows, COLUMNS[args.workload], out)
    if args.workload == "terasort" and not rows[0]["ok"]:
        raise VerifyFailed("sorted output failed verification")
    return EXIT_OK


def cmd_sim(args, out) -> int:
    from .apps import COLUMNS, csv_text, run_sim
    cfg = load_config(args.sim_config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    rows = run_sim(cfg)
    reports = {w: csv_text(r, COLUMNS[w]) for w, r in rows.items()}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for w, text in reports.items():
            with open(os.path.join(args.out, f"{w}.csv"), "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
    else:
        out.write("\n".join(reports.values()))
    if any(not r["ok"] for r in rows.get("terasort", [])):
        raise VerifyFailed("sorted output failed verification")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0: {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="cluster config file (default: $SS_CONFIG)")
    common.add_argument("--data-dir", help="where the simulated cluster keeps its state")
    common.add_argument("--servers", help="comma-separated host:port list of real nodes")
    common.add_argument("--bind-host", default="0.0.0.0", help=argparse.SUPPRESS)
    common.add_argument("--user", help="user name for access checks")
    common.add_argument("--seed", type=int, help="override the config seed")

    p = argparse.ArgumentParser(prog="sectorsphere", description="Sector/Sphere operator tool")
    sub = p.add_subparsers(dest="command", required=True)

    node = sub.add_parser("node", help="run a storage/compute node").add_subparsers(
        dest="node_command", required=True)
    ns = node.add_parser("start", parents=[common], help="start a node on a UDP port")
    ns.add_argument("--listen", required=True, metavar="HOST:PORT")
    ns.add_argument("--join", metavar="HOST:PORT", help="any node already in the ring")
    ns.add_argument("--coordinator", metavar="HOST:PORT")
    ns.add_argument("--run-for", type=float, metavar="SECONDS")

    up = sub.add_parser("up", parents=[common], help="upload a local file")
    up.add_argument("local")
    up.add_argument("name")

    down = sub.add_parser("down", parents=[common], help="download a file")
    down.add_argument("name")
    down.add_argument("local")

    ls = sub.add_parser("ls", parents=[common], help="list files")
    ls.add_argument("prefix", nargs="?", default="")

    rm = sub.add_parser("rm", parents=[common], help="delete a file")
    rm.add_argument("name")

    job = sub.add_parser("job", help="Sphere jobs").add_subparsers(dest="job_command",
                                                                   required=True)
    jr = job.add_parser("run", parents=[common], help="apply a UDF to stored files")
    jr.add_argument("udf", help=f"one of {', '.join(sorted(BUILTIN_UDFS))} or module:function")
    jr.add_argument("input", nargs="+")
    jr.add_argument("--buckets", type=_positive_int, default=0)
    jr.add_argument("--record-size", type=_positive_int, default=0,
                    help="fixed record width in bytes (default: length-prefixed)")
    jr.add_argument("--output", default="output")

    bench = sub.add_parser("bench", parents=[common], help="run a benchmark, print CSV")
    bench.add_argument("workload", choices=["terasort", "kmeans", "llpr"])
    bench.add_argument("--records", type=_positive_int)
    bench.add_argument("--nodes", type=_positive_int)
    bench.add_argument("--buckets", type=_positive_int)
    bench.add_argument("--k", type=_positive_int)
    bench.add_argument("--iters", type=_positive_int)
    bench.add_argument("--rtts", help="comma-separated RTTs in ms (llpr)")
    bench.add_argument("--loss", type=float)
    bench.add_argument("--size-bytes", type=_positive_int)

    sim = sub.add_parser("sim", help="run the workloads named in a config file")
    sim.add_argument("sim_config", metavar="config")
    sim.add_argument("--out", help="write <workload>.csv files here instead of stdout")
    sim.add_argument("--seed", type=int)
    return p


def _dispatch(args, out, err) -> int:
    if args.command == "node":
        return cmd_node_start(args, out, err)
    if args.command == "job":
        return cmd_job_run(args, out)
    return {
        "up": cmd_up, "down": cmd_down, "ls": cmd_ls, "rm": cmd_rm,
        "bench": cmd_bench, "sim": cmd_sim,
    }[args.command](args, out)


def main(argv: Sequence[str] | None = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return _dispatch(args, out, err)
    except VerifyFailed as exc:
        print(f"error: {exc}", file=err)
        return EXIT_VERIFY
    except (E.SectorError, ConfigError, OSError) as exc:
        kind = type(exc).__name__
        msg = exc.strerror if isinstance(exc, OSError) and exc.strerror else exc
        where = f" ({exc.filename})" if isinstance(exc, OSError) and exc.filename else ""
        print(f"error: {kind}: {msg}{where}", file=err)
        return exit_code_for(exc)
    except ValueError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_USAGE


@dataclass
class CliResult:
    code: int
    stdout: str
    stderr: str


def run_cli(args: Sequence[str]) -> CliResult:
    """Run one command in-process, capturing its output."""
    out, err = io.StringIO(), io.StringIO()
    code = main(list(args), out, err)
    return CliResult(code, out.getvalue(), err.getvalue())


if __name__ == "__main__":
    sys.exit(main())
