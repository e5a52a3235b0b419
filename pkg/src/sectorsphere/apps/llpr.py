"""Long-haul versus local throughput of the transport on simulated links."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

from ..net import Address, LinkProfile, SimNetwork
from ..transport import TransportConfig, connect, listen, recv_stream, send_stream

LOCAL_RTT_MS = 1.0


def llpr(wan_bps: float, local_bps: float) -> float:
    if not local_bps > 0:
        raise ValueError(f"local throughput must be positive, got {local_bps}")
    if wan_bps < 0:
        raise ValueError(f"throughput must be non-negative, got {wan_bps}")
    return wan_bps / local_bps


@dataclass(frozen=True)
class LlprReport:
    wan_throughput_bps: float
    local_throughput_bps: float
    llpr: float


def local_profile_for(wan: LinkProfile) -> LinkProfile:
    """Same bandwidth, loss and queue as ``wan``, but a 1 ms round trip."""
    return replace(wan, latency_ms=LOCAL_RTT_MS / 2, jitter_ms=0.0)


def measure_throughput(net: SimNetwork, profile: LinkProfile, size_bytes: int,
                       transport: TransportConfig | None = None) -> float:
    """Bulk-send ``size_bytes`` between two dedicated hosts; returns goodput in bit/s.

    Timing starts once the connection is open and stops when the last byte
    reaches the receiver's stream.
    """
    src, dst = Address("llpr-src", 5000), Address("llpr-dst", 5000)
    net.set_link(src.host, dst.host, profile)
    a, b = net.bind(src), net.bind(dst)
    lst = listen(b, config=transport)
    try:
        conn = connect(a, dst, config=transport)
        peer = lst.accept(timeout_ms=60_000)
        if peer is None:
            raise RuntimeError("llpr: no connection accepted")
        payload = bytes(size_bytes)
        t0 = net.now
        send_stream(conn, payload)
        got = 0
        while got < size_bytes:
            got += len(recv_stream(peer, size_bytes - got, timeout_ms=None))
        elapsed = (net.now - t0) / 1000.0
        conn.abort("done")
        peer.abort("done")
    finally:
        lst.close()
        a.close()
        b.close()
    return size_bytes * 8 / elapsed if elapsed > 0 else float("inf")


def llpr_harness(net: SimNetwork, wan_profile: LinkProfile, size_bytes: int,
                 transport: TransportConfig | None = None) -> LlprReport:
    """Run the same transfer over a local link and over ``wan_profile``.

    The local leg runs on a twin network with the same seed and host names,
    so both legs see the same per-link loss draws.
    """
    twin = SimNetwork(net.seed, default_profile=net.default_profile)
    local = measure_throughput(twin, local_profile_for(wan_profile), size_bytes, transport)
    wan = measure_throughput(net, wan_profile, size_bytes, transport)
    return LlprReport(wan, local, llpr(wan, local))


def llpr_sweep(rtts_ms: Iterable[float], loss: float = 0.0, size_bytes: int = 100 * 1024 * 1024,
               bandwidth_bps: float = 100e6, seed: int = 0,
               queue_bytes: int | None = None) -> list[dict]:
    """One report row per RTT; each measurement gets its own seeded network."""
    rows = []
    for rtt in rtts_ms:
        net = SimNetwork(seed)
        prof = LinkProfile(latency_ms=rtt / 2, loss_rate=loss, bandwidth_bps=bandwidth_bps,
                           queue_bytes=queue_bytes)
        rep = llpr_harness(net, prof, size_bytes)
        rows.append({
            "rtt_ms": rtt, "loss": loss,
            "throughput_wan": rep.wan_throughput_bps,
            "throughput_local": rep.local_throughput_bps,
            "llpr": rep.llpr,
        })
    return rows
