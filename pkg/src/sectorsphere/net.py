"""Datagram networks: a deterministic discrete-event simulator.

Everything above this layer talks to a ``Network`` (``SimNetwork`` here, or
``sectorsphere.udp.UdpNetwork`` for real sockets) through the same small
surface: ``bind``, ``now``, ``call_later``, ``call_soon`` and ``run_until``.
Endpoints deliver arriving datagrams either to an installed ``handler`` or
to an inbox drained with ``poll``.

Links are keyed by the ordered *host* pair, so several endpoints on the same
two hosts share one link (and its bandwidth queue). That is how shared
bottlenecks are modelled.
"""

from __future__ import annotations

import heapq
import math
import random
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, NamedTuple

MTU_PAYLOAD = 1472


class NetError(Exception):
    """Base class for network layer errors."""


class AddressInUse(NetError):
    pass


class PayloadTooLarge(NetError):
    pass


class EndpointClosed(NetError):
    pass


class NotSimulated(NetError):
    """Raised for virtual-clock operations on a real network."""


class Address(NamedTuple):
    host: str
    port: int

    def __str__(self) -> str:
        return f"{self.host}:{self.port}"

    @classmethod
    def parse(cls, text: str) -> "Address":
        host, _, port = text.rpartition(":")
        if not host:
            raise ValueError(f"bad address {text!r}, expected host:port")
        return cls(host, int(port))


class Datagram(NamedTuple):
    src: Address
    dst: Address
    payload: bytes
    enqueue_time: float


@dataclass(frozen=True)
class LinkProfile:
    """One-way characteristics of a simulated path.

    ``bandwidth_bps=None`` means unlimited. ``queue_bytes`` bounds the
    drop-tail queue in front of a finite-bandwidth link (None: unbounded).
    """

    latency_ms: float = 0.0
    loss_rate: float = 0.0
    bandwidth_bps: float | None = None
    jitter_ms: float = 0.0
    queue_bytes: int | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.loss_rate <= 1.0) or math.isnan(self.loss_rate):
            raise ValueError(f"loss_rate must be in [0, 1], got {self.loss_rate}")
        if self.latency_ms < 0:
            raise ValueError(f"latency_ms must be >= 0, got {self.latency_ms}")
        if self.jitter_ms < 0:
            raise ValueError(f"jitter_ms must be >= 0, got {self.jitter_ms}")
        if self.bandwidth_bps is not None and not self.bandwidth_bps > 0:
            raise ValueError(f"bandwidth_bps must be > 0, got {self.bandwidth_bps}")
        if self.queue_bytes is not None and self.queue_bytes < 0:
            raise ValueError("queue_bytes must be >= 0")


class Timer:
    __slots__ = ("_entry",)

    def __init__(self, entry: list) -> None:
        self._entry = entry

    @property
    def when(self) -> float:
        return self._entry[0]

    @property
    def active(self) -> bool:
        return self._entry[2] is not None

    def cancel(self) -> None:
        self._entry[2] = None
        self._entry[3] = ()


class _Link:
    __slots__ = ("profile", "rng", "busy_until", "sent", "dropped", "queue_dropped",
                 "delivered_bytes")

    def __init__(self, profile: LinkProfile, rng: random.Random) -> None:
        self.profile = profile
        self.rng = rng
        self.busy_until = 0.0
        self.sent = 0
        self.dropped = 0
        self.queue_dropped = 0
        self.delivered_bytes = 0


class SimEndpoint:
    """A bound address on a ``SimNetwork``."""

    def __init__(self, net: "SimNetwork", addr: Address) -> None:
        self.net = net
        self.addr = addr
        self.handler: Callable[[Datagram], None] | None = None
        self.closed = False
        self._inbox: deque[Datagram] = deque()

    def send(self, dst: Address, payload: bytes) -> None:
        if self.closed:
            raise EndpointClosed(str(self.addr))
        self.net._send(self.addr, dst, payload)

    def poll(self) -> Datagram | None:
        return self._inbox.popleft() if self._inbox else None

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self._inbox.clear()
            self.net._unbind(self)

    def _arrive(self, dgram: Datagram) -> None:
        if self.handler is not None:
            self.handler(dgram)
        else:
            self._inbox.append(dgram)

    def __repr__(self) -> str:
        return f"SimEndpoint({self.addr})"


class SimNetwork:
    """Single-threaded discrete-event network with a virtual millisecond clock.

    Each directed link draws loss and jitter from its own stream, seeded from
    the network seed and the two host names, so a given seed and call
    sequence always produce the same delivery trace, and traffic on one link
    never perturbs the draws seen by another.
    """

    simulated = True

    def __init__(self, seed: int = 0, default_profile: LinkProfile | None = None,
                 record_trace: bool = False) -> None:
        self.seed = seed
        self.rng = random.Random(seed)
        self.now = 0.0
        self.default_profile = default_profile or LinkProfile()
        self.trace: list[tuple[float, Address, Address, bytes]] | None = [] if record_trace else None
        self._heap: list[list] = []
        self._counter = 0
        self._endpoints: dict[Address, SimEndpoint] = {}
        self._links: dict[tuple[str, str], _Link] = {}
        self.events_processed = 0

    # -- topology -----------------------------------------------------------

    def set_link(self, a: Address | str, b: Address | str, profile: LinkProfile,
                 both_directions: bool = True) -> None:
        ha = a.host if isinstance(a, Address) else a
        hb = b.host if isinstance(b, Address) else b
        self._links[(ha, hb)] = self._new_link(ha, hb, profile)
        if both_directions and ha != hb:
            self._links[(hb, ha)] = self._new_link(hb, ha, profile)

    def _new_link(self, ha: str, hb: str, profile: LinkProfile) -> _Link:
        return _Link(profile, random.Random(f"{self.seed}:{ha}>{hb}"))

    def link(self, a: Address | str, b: Address | str) -> _Link:
        ha = a.host if isinstance(a, Address) else a
        hb = b.host if isinstance(b, Address) else b
        link = self._links.get((ha, hb))
        if link is None:
            link = self._links[(ha, hb)] = self._new_link(ha, hb, self.default_profile)
        return link

    def bind(self, addr: Address) -> SimEndpoint:
        if addr in self._endpoints:
            raise AddressInUse(str(addr))
        ep = SimEndpoint(self, addr)
        self._endpoints[addr] = ep
        return ep

    def is_bound(self, addr: Address) -> bool:
        return addr in self._endpoints

    def _unbind(self, ep: SimEndpoint) -> None:
        if self._endpoints.get(ep.addr) is ep:
            del self._endpoints[ep.addr]

    # -- clock and events ---------------------------------------------------

    def call_at(self, when: float, fn: Callable[..., Any], *args: Any) -> Timer:
        self._counter += 1
        entry = [max(when, self.now), self._counter, fn, args]
        heapq.heappush(self._heap, entry)
        return Timer(entry)

    def call_later(self, delay_ms: float, fn: Callable[..., Any], *args: Any) -> Timer:
        return self.call_at(self.now + delay_ms, fn, *args)

    def call_soon(self, fn: Callable[..., Any], *args: Any) -> Timer:
        return self.call_at(self.now, fn, *args)

    def next_event_time(self) -> float | None:
        heap = self._heap
        while heap and heap[0][2] is None:
            heapq.heappop(heap)
        return heap[0][0] if heap else None

    def step(self) -> bool:
        """Run the earliest pending event. Returns False when idle."""
        heap = self._heap
        while heap:
            when, _, fn, args = heapq.heappop(heap)
            if fn is None:
                continue
            self.now = when
            self.events_processed += 1
            fn(*args)
            return True
        return False

    def advance_time(self, dt_ms: float) -> None:
        if dt_ms < 0:
            raise ValueError("dt_ms must be non-negative")
        target = self.now + dt_ms
        while True:
            nxt = self.next_event_time()
            if nxt is None or nxt > target:
                break
            self.step()
        if self.now < target:
            self.now = target

    def run_until(self, predicate: Callable[[], bool], timeout_ms: float | None = None) -> bool:
        """Process events until ``predicate()`` holds or the timeout elapses.

        Safe to call re-entrantly from inside an event callback.
        """
        deadline = None if timeout_ms is None else self.now + timeout_ms
        while not predicate():
            nxt = self.next_event_time()
            if nxt is None or (deadline is not None and nxt > deadline):
                if deadline is not None and self.now < deadline:
                    self.now = deadline
                return predicate()
            self.step()
        return True

    def run_for(self, duration_ms: float) -> None:
        self.advance_time(duration_ms)

    # -- datagrams ----------------------------------------------------------

    def _send(self, src: Address, dst: Address, payload: bytes) -> None:
        size = len(payload)
        if size > MTU_PAYLOAD:
            raise PayloadTooLarge(f"{size} > {MTU_PAYLOAD}")
        link = self._links.get((src.host, dst.host))
        if link is None:
            link = self.link(src.host, dst.host)
        prof = link.profile
        link.sent += 1
        loss = prof.loss_rate
        if loss > 0.0 and (loss >= 1.0 or link.rng.random() < loss):
            link.dropped += 1
            return
        now = self.now
        bw = prof.bandwidth_bps
        if bw is None:
            depart = now
        else:
            start = link.busy_until if link.busy_until > now else now
            if prof.queue_bytes is not None:
                backlog = (start - now) * bw / 8000.0
                if backlog + size > prof.queue_bytes:
                    link.queue_dropped += 1
                    return
            depart = start + size * 8000.0 / bw
            link.busy_until = depart
        arrival = depart + prof.latency_ms
        if prof.jitter_ms > 0.0:
            arrival += link.rng.uniform(0.0, prof.jitter_ms)
        self.call_at(arrival, self._deliver, Datagram(src, dst, payload, now), link)

    def _deliver(self, dgram: Datagram, link: _Link) -> None:
        ep = self._endpoints.get(dgram.dst)
        if ep is None:
            return
        link.delivered_bytes += len(dgram.payload)
        if self.trace is not None:
            self.trace.append((self.now, dgram.src, dgram.dst, dgram.payload))
        ep._arrive(dgram)


# Functional surface -------------------------------------------------------

def create_sim_network(seed: int, **kwargs: Any) -> SimNetwork:
    return SimNetwork(seed, **kwargs)


def set_link(net: SimNetwork, a: Address, b: Address, profile: LinkProfile) -> None:
    net.set_link(a, b, profile)


def bind(net, addr: Address):
    return net.bind(addr)


def send_datagram(ep, dst: Address, payload: bytes) -> None:
    ep.send(dst, payload)


def poll_datagram(ep) -> Datagram | None:
    return ep.poll()


def advance_time(net, dt_ms: float) -> None:
    net.advance_time(dt_ms)
