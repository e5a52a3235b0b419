"""Cluster configuration: flat ``key = value`` text with ``[link a b]`` sections.

Example::

    seed = 7
    nodes = 4
    chunk_size = 65536
    latency_ms = 0.5

    [link node0 node3]
    latency_ms = 40
    bandwidth_bps = 1e8

Keys with a workload prefix (``terasort.records``, ``kmeans.k``,
``llpr.rtts``) parameterise the ``sim`` runner.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from typing import Any

from .net import Address, LinkProfile, SimNetwork
from .transport import TransportConfig

ENV_VAR = "SS_CONFIG"


class ConfigError(ValueError):
    pass


_PROFILE_KEYS = {f.name for f in fields(LinkProfile)}
_TRANSPORT_KEYS = ("sync_ms", "initial_rate", "min_rate", "max_rate", "increase_step")

WORKLOAD_DEFAULTS: dict[str, dict[str, Any]] = {
    "terasort": {"records": 100_000, "buckets": 0},
    "kmeans": {"records": 10_000, "k": 8, "iters": 5, "d": 8},
    "llpr": {"rtts": "1,50,100,200", "loss": 0.0, "size_bytes": 100 * 1024 * 1024,
             "bandwidth_bps": 100e6},
}


@dataclass
class LinkSpec:
    a: str
    b: str
    profile: LinkProfile


@dataclass
class ClusterConfig:
    seed: int = 0
    nodes: int = 3
    m_bits: int = 16
    chunk_size: int = 64 * 1024
    target_replicas: int = 3
    port: int = 9000
    data_dir: str | None = None
    user: str = "operator"
    workloads: list[str] = field(default_factory=lambda: ["terasort"])
    default_profile: LinkProfile = field(default_factory=lambda: LinkProfile(latency_ms=0.5))
    transport: TransportConfig = field(default_factory=TransportConfig)
    links: list[LinkSpec] = field(default_factory=list)
    params: dict[str, dict[str, Any]] = field(
        default_factory=lambda: {k: dict(v) for k, v in WORKLOAD_DEFAULTS.items()})
    servers: list[Address] = field(default_factory=list)

    def validate(self) -> "ClusterConfig":
        if self.nodes < 1:
            raise ConfigError("nodes must be >= 1")
        if not 1 <= self.m_bits <= 160:
            raise ConfigError("m_bits must be in [1, 160]")
        if self.chunk_size < 1:
            raise ConfigError("chunk_size must be positive")
        if self.target_replicas < 1:
            raise ConfigError("target_replicas must be >= 1")
        t = self.transport
        if not 0 < t.min_rate <= t.initial_rate <= t.max_rate:
            raise ConfigError("need 0 < min_rate <= initial_rate <= max_rate")
        if t.sync_ms <= 0 or t.increase_step <= 0:
            raise ConfigError("sync_ms and increase_step must be positive")
        for w in self.workloads:
            if w not in WORKLOAD_DEFAULTS:
                raise ConfigError(f"unknown workload {w!r}")
        return self

    def sim_network(self) -> SimNetwork:
        net = SimNetwork(self.seed, default_profile=self.default_profile)
        for ln in self.links:
            net.set_link(ln.a, ln.b, ln.profile)
        return net

    def sim_cluster(self, data_dir: str | None = None):
        from .cluster import SimCluster
        return SimCluster(
            self.nodes, self.seed, m=self.m_bits, chunk_size=self.chunk_size,
            target_replicas=self.target_replicas, data_dir=data_dir or self.data_dir,
            transport=self.transport, net=self.sim_network(), port=self.port,
        )


def _number(text: str, key: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None


def _int(text: str, key: str) -> int:
    v = _number(text, key)
    if not v.is_integer():
        raise ConfigError(f"{key}: expected an integer, got {text!r}")
    return int(v)


def _profile(values: dict[str, str], base: LinkProfile, where: str) -> LinkProfile:
    kw: dict[str, Any] = {}
    for f in fields(LinkProfile):
        if f.name in values:
            raw = values[f.name]
            if raw.lower() in ("", "none", "inf"):
                kw[f.name] = None
            elif f.name == "queue_bytes":
                kw[f.name] = _int(raw, f"{where}.{f.name}")
            else:
                kw[f.name] = _number(raw, f"{where}.{f.name}")
        else:
            kw[f.name] = getattr(base, f.name)
    try:
        return LinkProfile(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(text: str) -> ClusterConfig:
    cfg = ClusterConfig()
    top: dict[str, str] = {}
    sections: list[tuple[str, str, dict[str, str]]] = []
    current: dict[str, str] = top
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: unterminated section header")
            parts = line[1:-1].split()
            if len(parts) != 3 or parts[0] != "link":
                raise ConfigError(f"line {lineno}: expected [link <host> <host>]")
            current = {}
            sections.append((parts[1], parts[2], current))
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in current:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        current[key] = value

    for key, value in top.items():
        if key in ("seed", "nodes", "m_bits", "chunk_size", "target_replicas", "port"):
            setattr(cfg, key, _int(value, key))
        elif key == "data_dir":
            cfg.data_dir = value or None
        elif key == "user":
            cfg.user = value
        elif key in ("workload", "workloads"):
            cfg.workloads = [w.strip() for w in value.split(",") if w.strip()]
        elif key == "servers":
            try:
                cfg.servers = [Address.parse(s.strip()) for s in value.split(",") if s.strip()]
            except ValueError as exc:
                raise ConfigError(f"servers: {exc}") from None
        elif key in _TRANSPORT_KEYS:
            setattr(cfg.transport, key, _number(value, key))
        elif key in _PROFILE_KEYS:
            pass  # folded into the default profile below
        elif "." in key:
            work, name = key.split(".", 1)
            if work not in WORKLOAD_DEFAULTS or name not in WORKLOAD_DEFAULTS[work]:
                raise ConfigError(f"unknown key {key!r}")
            default = WORKLOAD_DEFAULTS[work][name]
            if isinstance(default, str):
                cfg.params[work][name] = value
            elif isinstance(default, int):
                cfg.params[work][name] = _int(value, key)
            else:
                cfg.params[work][name] = _number(value, key)
        else:
            raise ConfigError(f"unknown key {key!r}")
    cfg.default_profile = _profile(top, cfg.default_profile, "default link")
    for a, b, values in sections:
        for k in values:
            if k not in _PROFILE_KEYS:
                raise ConfigError(f"[link {a} {b}]: unknown key {k!r}")
        cfg.links.append(LinkSpec(a, b, _profile(values, cfg.default_profile, f"link {a} {b}")))
    return cfg.validate()


def load_config(path: str | None = None) -> ClusterConfig:
    """Read ``path`` (or ``$SS_CONFIG``); defaults when neither is given."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return ClusterConfig().validate()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def llpr_rtts(cfg: ClusterConfig) -> list[float]:
    raw = str(cfg.params["llpr"]["rtts"])
    try:
        return [float(x) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"llpr.rtts: bad list {raw!r}") from None
