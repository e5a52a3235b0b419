"""Shared builders for tests."""

from __future__ import annotations

import functools

from sectorsphere.net import Address, LinkProfile, SimNetwork
from sectorsphere.routing import ChordNode, DirectLinks
from sectorsphere.transport import connect, listen


def build_ring(n: int, m: int = 16, ids=None):
    """An in-process ring, joined one node at a time and fully stabilized."""
    links = DirectLinks()
    nodes = []
    for i in range(n):
        node_id = None if ids is None else ids[i]
        node = links.add(ChordNode(Address(f"h{i}", 9000), m=m, node_id=node_id))
        node.join(None if i == 0 else nodes[0].addr)
        nodes.append(node)
        for _ in range(3):
            for x in nodes:
                x.stabilize_step()
    stabilize(nodes, 2 * n)
    return links, nodes


def stabilize(nodes, rounds: int) -> None:
    for _ in range(rounds):
        for x in nodes:
            x.stabilize_step()
            x.check_predecessor()
    for x in nodes:
        x.fix_all_fingers()


def bulk_flows(n: int, seconds: float, seed: int = 3) -> list[float]:
    """``n`` saturating flows over one 100 Mbps, 20 ms RTT bottleneck.

    Returns each flow's goodput in bit/s over the second half of the run.
    """
    net = SimNetwork(seed)
    net.set_link("a", "b", LinkProfile(latency_ms=10, bandwidth_bps=100e6, queue_bytes=150_000))
    sink = Address("b", 1)
    lst = listen(net.bind(sink))
    conns = [connect(net.bind(Address("a", 10 + i)), sink) for i in range(n)]
    peers = [lst.accept(timeout_ms=1000) for _ in range(n)]
    fed = [0] * n
    block = bytes(1 << 20)

    def feed():
        for i, c in enumerate(conns):
            while fed[i] - c.stats.bytes_delivered < (2 << 20):
                c.send(block)
                fed[i] += len(block)
        for p in peers:
            p.stream.clear()
        net.call_later(50, feed)

    feed()
    half = seconds * 500
    net.run_for(half)
    mid = [p.stats.bytes_received for p in peers]
    net.run_for(half)
    return [(p.stats.bytes_received - m) * 8 / (half / 1000) for p, m in zip(peers, mid)]


# criterion number -> (title, passed, detail); printed by conftest at session end
CRITERIA: dict[int, tuple[str, bool, str]] = {}


def criterion(number: int, title: str):
    """Record a pass/fail line for an acceptance test; the test returns its detail text."""
    def deco(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                msg = str(exc).strip().splitlines()
                CRITERIA[number] = (title, False, f"{type(exc).__name__}: {msg[0] if msg else ''}")
                print(format_line(number))
                raise
            CRITERIA[number] = (title, True, detail or "")
            print(format_line(number))
        return run
    return deco


def format_line(number: int) -> str:
    title, ok, detail = CRITERIA[number]
    return f"C{number:<2} {'PASS' if ok else 'FAIL'}  {title}  [{detail}]"
