"""Real UDP backend with the same surface as ``SimNetwork``.

Best effort only: wall-clock timers plus ``select`` over the bound sockets,
all pumped from ``run_until``. Not used by the deterministic tests.
"""

from __future__ import annotations

import heapq
import select
import socket
import time
from collections import deque
from typing import Any, Callable

from .net import (
    MTU_PAYLOAD,
    Address,
    AddressInUse,
    Datagram,
    EndpointClosed,
    NotSimulated,
    PayloadTooLarge,
    Timer,
)


class UdpEndpoint:
    def __init__(self, net: "UdpNetwork", addr: Address, sock: socket.socket) -> None:
        self.net = net
        self.addr = addr
        self.sock = sock
        self.handler: Callable[[Datagram], None] | None = None
        self.closed = False
        self._inbox: deque[Datagram] = deque()

    def send(self, dst: Address, payload: bytes) -> None:
        if self.closed:
            raise EndpointClosed(str(self.addr))
        if len(payload) > MTU_PAYLOAD:
            raise PayloadTooLarge(f"{len(payload)} > {MTU_PAYLOAD}")
        try:
            self.sock.sendto(payload, (dst.host, dst.port))
        except OSError:
            pass  # unreachable peers look like loss

    def poll(self) -> Datagram | None:
        if not self._inbox:
            self.net._drain(self)
        return self._inbox.popleft() if self._inbox else None

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self.net._unbind(self)
            self.sock.close()

    def _arrive(self, dgram: Datagram) -> None:
        if self.handler is not None:
            self.handler(dgram)
        else:
            self._inbox.append(dgram)


class UdpNetwork:
    simulated = False

    def __init__(self) -> None:
        self._t0 = time.monotonic()
        self._heap: list[list] = []
        self._counter = 0
        self._endpoints: dict[Address, UdpEndpoint] = {}

    @property
    def now(self) -> float:
        return (time.monotonic() - self._t0) * 1000.0

    def bind(self, addr: Address) -> UdpEndpoint:
        if addr in self._endpoints:
            raise AddressInUse(str(addr))
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            sock.bind((addr.host, addr.port))
        except OSError as exc:
            sock.close()
            raise AddressInUse(str(addr)) from exc
        sock.setblocking(False)
        if addr.port == 0:
            addr = Address(addr.host, sock.getsockname()[1])
        ep = UdpEndpoint(self, addr, sock)
        self._endpoints[addr] = ep
        return ep

    def _unbind(self, ep: UdpEndpoint) -> None:
        self._endpoints.pop(ep.addr, None)

    def call_at(self, when: float, fn: Callable[..., Any], *args: Any) -> Timer:
        self._counter += 1
        entry = [when, self._counter, fn, args]
        heapq.heappush(self._heap, entry)
        return Timer(entry)

    def call_later(self, delay_ms: float, fn: Callable[..., Any], *args: Any) -> Timer:
        return self.call_at(self.now + delay_ms, fn, *args)

    def call_soon(self, fn: Callable[..., Any], *args: Any) -> Timer:
        return self.call_at(self.now, fn, *args)

    def advance_time(self, dt_ms: float) -> None:
        raise NotSimulated("advance_time is only available on a simulated network")

    def _drain(self, ep: UdpEndpoint) -> None:
        while not ep.closed:
            try:
                data, (host, port) = ep.sock.recvfrom(65535)
            except (BlockingIOError, InterruptedError):
                return
            except OSError:
                return
            ep._arrive(Datagram(Address(host, port), ep.addr, data, self.now))

    def _run_timers(self) -> None:
        heap = self._heap
        while heap and heap[0][0] <= self.now:
            _, _, fn, args = heapq.heappop(heap)
            if fn is not None:
                fn(*args)

    def pump(self, max_wait_ms: float) -> None:
        self._run_timers()
        heap = self._heap
        while heap and heap[0][2] is None:
            heapq.heappop(heap)
        wait = max_wait_ms
        if heap:
            wait = min(wait, max(0.0, heap[0][0] - self.now))
        socks = [ep.sock for ep in self._endpoints.values()]
        if socks:
            ready, _, _ = select.select(socks, [], [], wait / 1000.0)
        else:
            time.sleep(wait / 1000.0)
            ready = []
        by_sock = {ep.sock: ep for ep in self._endpoints.values()}
        for s in ready:
            ep = by_sock.get(s)
            if ep is not None:
                self._drain(ep)
        self._run_timers()

    def run_until(self, predicate: Callable[[], bool], timeout_ms: float | None = None) -> bool:
        deadline = None if timeout_ms is None else self.now + timeout_ms
        while not predicate():
            if deadline is not None and self.now >= deadline:
                return predicate()
            left = 50.0 if deadline is None else min(50.0, deadline - self.now)
            self.pump(max(0.0, left))
        return True

    def run_for(self, duration_ms: float) -> None:
        self.run_until(lambda: False, duration_ms)
