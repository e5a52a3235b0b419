"""Reliable, rate-paced connections over datagram endpoints.

One sequence space per direction carries two kinds of sequenced frames: DATA
(the byte stream) and MSG (fragments of request/response messages). Both get
the same loss recovery and pacing. Control frames (ACK, NAK, HANDSHAKE,
KEEPALIVE) are unsequenced and sent immediately.

Loss recovery follows the UDT skeleton: the receiver NAKs gaps as soon as it
sees them and re-reports stale ones every SYNC interval; the sender keeps a
loss list that takes priority over new data; ACKs are cumulative and sent
once per SYNC interval; an EXP timer covers tail loss.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import struct
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable

from ..net import Address, Datagram, EndpointClosed
from .frame import (
    MAX_PAYLOAD,
    Flag,
    FrameError,
    Kind,
    decode_frame,
    encode_frame,
    unwrap_seq,
)
from .rate import RateControl

log = logging.getLogger(__name__)

_U32 = struct.Struct(">I")
_ACK_BODY = struct.Struct(">II")
_RANGE = struct.Struct(">II")


class TransportError(Exception):
    pass


class Timeout(TransportError):
    pass


class ConnectionClosed(TransportError):
    pass


class RemoteError(TransportError):
    """The peer's request handler raised; carries its message."""


@dataclass
class TransportConfig:
    sync_ms: float = 10.0
    initial_rate: float = 100.0
    min_rate: float = 10.0
    max_rate: float = 1e6
    increase_step: float = 10.0
    decrease_factor: float = 8.0 / 9.0
    handshake_retry_ms: float = 250.0
    keepalive_ms: float = 1000.0
    idle_timeout_ms: float = 5000.0
    initial_rtt_ms: float = 100.0
    request_timeout_ms: float = 10_000.0


@dataclass
class TransportStats:
    bytes_sent: int = 0
    bytes_delivered: int = 0
    bytes_received: int = 0
    retransmissions: int = 0
    packets_sent: int = 0
    naks_received: int = 0
    rtt_est_ms: float = 0.0
    current_rate_pps: float = 0.0


class State(Enum):
    CONNECTING = "connecting"
    OPEN = "open"
    CLOSING = "closing"
    CLOSED = "closed"


DEFERRED = object()


class Request:
    """An incoming request. Handlers return bytes, or keep this object and
    return ``None`` to answer later via ``respond``."""

    __slots__ = ("conn", "request_id", "data", "answered")

    def __init__(self, conn: "Connection", request_id: int, data: bytes) -> None:
        self.conn = conn
        self.request_id = request_id
        self.data = data
        self.answered = False

    def respond(self, data: bytes) -> None:
        if not self.answered:
            self.answered = True
            self.conn._send_response(self.request_id, data, Flag.NONE)

    def fail(self, message: str) -> None:
        if not self.answered:
            self.answered = True
            self.conn._send_response(self.request_id, message.encode(), Flag.ERROR)


class Connection:
    def __init__(self, mux: "_Mux", remote: Address, nonce: int, *, initiator: bool) -> None:
        self.mux = mux
        self.net = mux.net
        self.local = mux.ep.addr
        self.remote = remote
        self.nonce = nonce
        self.initiator = initiator
        cfg = mux.config
        self.config = cfg
        self.state = State.CONNECTING if initiator else State.OPEN
        self.handler: Callable[[Request], Any] | None = None
        self.rate_control = RateControl(
            rate=cfg.initial_rate, min_rate=cfg.min_rate, max_rate=cfg.max_rate,
            increase_step=cfg.increase_step, decrease_factor=cfg.decrease_factor,
        )
        self.rtt_est_ms = cfg.initial_rtt_ms
        self._rtt_sampled = False
        self.stats = TransportStats()
        now = self.net.now
        self.opened_at = now
        self._last_recv = now
        self._last_send = now
        # sender
        self._pending: deque[list] = deque()
        # single-frame messages overtake queued bulk frames, so control
        # traffic is not stuck behind megabytes of chunk data
        self._express: deque[list] = deque()
        self._snd_next = 0
        self._snd_una = 0
        self._unacked: dict[int, tuple[int, int, int, bytes]] = {}
        self._send_time: dict[int, float] = {}
        self._retx: set[int] = set()
        self._loss_heap: list[int] = []
        self._loss_set: set[int] = set()
        self._peer_highest = -1
        self._next_send_time = now
        self._pace_timer = None
        self._last_progress = now
        self._exp_count = 0
        self._fin_queued = False
        # receiver
        self._rcv_next = 0
        self._rcv_highest = -1
        self._rcv_buf: dict[int, tuple] = {}
        self._rcv_loss: dict[int, float] = {}
        self._last_ack_sent = -1
        self._ack_wanted = False
        self._last_inorder_arrival = now
        self._peer_rtt_ms: float | None = None
        self.stream = bytearray()
        self.eof = False
        self._frag: dict[tuple[int, int], list[bytes]] = {}
        # messages
        self._rid = itertools.count(1)
        self._waiting: dict[int, tuple[Callable, Any]] = {}
        self._answered: dict[int, tuple[bytes, int]] = {}
        self._answered_order: deque[int] = deque()
        self._sync_timer = None
        self._keepalive_timer = self.net.call_later(cfg.keepalive_ms, self._keepalive)
        self._handshake_timer = None
        self._connect_cb: Callable | None = None
        self.close_reason: str | None = None
        self._orphans: dict[int, tuple[Callable, float]] = {}

    def __repr__(self) -> str:
        return f"Connection({self.local} -> {self.remote}, {self.state.value})"

    # -- public API ---------------------------------------------------------

    @property
    def is_open(self) -> bool:
        return self.state is State.OPEN

    @property
    def send_rate_pps(self) -> float:
        return self.rate_control.rate

    def send(self, data: bytes) -> None:
        if self.state not in (State.OPEN, State.CONNECTING):
            raise ConnectionClosed(f"{self!r}: {self.close_reason or 'closed'}")
        if data:
            self._enqueue(Kind.DATA, 0, 0, bytes(data))

    def recv(self, n: int, timeout_ms: float | None = 30_000.0) -> bytes:
        self.net.run_until(lambda: len(self.stream) >= n or self.eof
                           or self.state is State.CLOSED, timeout_ms)
        if not self.stream and (self.eof or self.state is State.CLOSED):
            raise ConnectionClosed(f"{self!r}: stream ended")
        out = bytes(self.stream[:n])
        del self.stream[:n]
        return out

    def request_async(self, data: bytes, callback: Callable[[Any], None],
                      timeout_ms: float | None = None) -> int:
        """Send a request; ``callback`` later receives the reply bytes or an
        exception instance (Timeout, ConnectionClosed, RemoteError)."""
        if self.state not in (State.OPEN, State.CONNECTING):
            raise ConnectionClosed(f"{self!r}: {self.close_reason or 'closed'}")
        rid = next(self._rid)
        timeout = self.config.request_timeout_ms if timeout_ms is None else timeout_ms
        timer = self.net.call_later(timeout, self._request_timed_out, rid)
        self._waiting[rid] = (callback, timer)
        self._enqueue(Kind.MSG, Flag.REQUEST, rid, bytes(data))
        return rid

    def request(self, data: bytes, timeout_ms: float | None = None) -> bytes:
        box: list = []
        self.request_async(data, box.append, timeout_ms)
        self.net.run_until(lambda: bool(box))
        result = box[0]
        if isinstance(result, BaseException):
            raise result
        return result

    def close(self) -> None:
        """Graceful close: queued data and a FIN are still delivered."""
        if self.state is State.OPEN:
            self.state = State.CLOSING
            self._fin_queued = True
            self._enqueue(Kind.DATA, Flag.FIN, 0, b"")

    def _adopt(self, old: "Connection") -> None:
        """Take over requests queued on a superseded outgoing attempt."""
        self._rid = old._rid
        for item in old._pending:
            self._pending.append(item)
        self._express.extend(old._express)
        for rid, (cb, remaining) in old._orphans.items():
            timer = self.net.call_later(remaining, self._request_timed_out, rid)
            self._waiting[rid] = (cb, timer)
        old._orphans = {}
        if self._pending or self._express:
            self._kick()

    def abort(self, reason: str = "aborted") -> None:
        if self.state is State.CLOSED:
            return
        if reason == "superseded":
            now = self.net.now
            self._orphans = {rid: (cb, max(0.0, t.when - now)) for rid, (cb, t) in self._waiting.items()}
            for _, t in self._waiting.values():
                t.cancel()
            self._waiting = {}
        self.state = State.CLOSED
        self.close_reason = reason
        for t in (self._pace_timer, self._sync_timer, self._keepalive_timer, self._handshake_timer):
            if t is not None:
                t.cancel()
        self._pace_timer = self._sync_timer = self._keepalive_timer = self._handshake_timer = None
        waiting, self._waiting = self._waiting, {}
        for cb, timer in waiting.values():
            timer.cancel()
            self.net.call_soon(cb, ConnectionClosed(f"{self!r}: {reason}"))
        if self._connect_cb is not None:
            cb, self._connect_cb = self._connect_cb, None
            self.net.call_soon(cb, ConnectionClosed(reason))
        self.mux._forget(self)

    def conn_stats(self) -> TransportStats:
        s = self.stats
        return TransportStats(
            bytes_sent=s.bytes_sent, bytes_delivered=s.bytes_delivered,
            bytes_received=s.bytes_received, retransmissions=s.retransmissions,
            packets_sent=s.packets_sent, naks_received=s.naks_received,
            rtt_est_ms=self.rtt_est_ms, current_rate_pps=self.rate_control.rate,
        )

    @property
    def idle(self) -> bool:
        """Nothing queued, unacknowledged or awaiting loss recovery."""
        return not (self._pending or self._express or self._unacked or self._rcv_loss)

    # -- sending ------------------------------------------------------------

    def _enqueue(self, kind: int, flags: int, rid: int, data: bytes) -> None:
        self._queue([kind, flags, rid, memoryview(data), 0])

    def _queue(self, item: list) -> None:
        if item[0] == Kind.MSG and len(item[3]) <= MAX_PAYLOAD:
            self._express.append(item)
        else:
            self._pending.append(item)
        self._kick()

    def _send_response(self, rid: int, data: bytes, flags: int) -> None:
        if self.state not in (State.OPEN, State.CLOSING):
            return
        self._answered[rid] = (data, flags)
        self._answered_order.append(rid)
        while len(self._answered_order) > 1024:
            self._answered.pop(self._answered_order.popleft(), None)
        self._queue([Kind.MSG, Flag.RESPONSE | flags, rid, memoryview(data), 0])

    def _kick(self) -> None:
        if self._pace_timer is None and self.state is not State.CONNECTING:
            self._pace_timer = self.net.call_at(self._next_send_time, self._pump)
        self._ensure_sync()

    def _pump(self) -> None:
        self._pace_timer = None
        if self.state in (State.CLOSED, State.CONNECTING):
            return
        now = self.net.now
        if now < self._next_send_time:
            self._pace_timer = self.net.call_at(self._next_send_time, self._pump)
            return
        if not self._emit_one():
            return
        self._next_send_time = now + 1000.0 / self.rate_control.rate
        if self._loss_heap or self._pending or self._express:
            self._pace_timer = self.net.call_at(self._next_send_time, self._pump)

    def _emit_one(self) -> bool:
        heap = self._loss_heap
        while heap:
            seq = heapq.heappop(heap)
            self._loss_set.discard(seq)
            item = self._unacked.get(seq)
            if item is None:
                continue
            kind, flags, rid, payload = item
            self._retx.add(seq)
            self.stats.retransmissions += 1
            self._raw_send(encode_frame(kind, seq, payload, flags=flags, request_id=rid,
                                        ack=int(self.rtt_est_ms * 1000)))
            return True
        queue = self._express or self._pending
        if not queue:
            return False
        head = queue[0]
        kind, flags, rid, view, off = head
        chunk = view[off:off + MAX_PAYLOAD]
        off += len(chunk)
        if off >= len(view):
            queue.popleft()
            if kind == Kind.MSG:
                flags |= Flag.LAST
        else:
            head[4] = off
        payload = bytes(chunk)
        seq = self._snd_next
        self._snd_next += 1
        if not self._unacked:
            self._last_progress = self.net.now
        self._unacked[seq] = (kind, flags, rid, payload)
        self._send_time[seq] = self.net.now
        self.stats.bytes_sent += len(payload)
        self._raw_send(encode_frame(kind, seq, payload, flags=flags, request_id=rid,
                                    ack=int(self.rtt_est_ms * 1000)))
        return True

    def _raw_send(self, data: bytes) -> None:
        self.stats.packets_sent += 1
        self.rate_control.sent_in_interval = True
        self._last_send = self.net.now
        try:
            self.mux.ep.send(self.remote, data)
        except EndpointClosed:
            self.abort("endpoint closed")

    def _control(self, kind: int, payload: bytes = b"", flags: int = 0, ack: int = 0,
                 rid: int = 0) -> None:
        self._last_send = self.net.now
        try:
            self.mux.ep.send(self.remote, encode_frame(kind, 0, payload, flags=flags, ack=ack,
                                                       request_id=rid))
        except EndpointClosed:
            self.abort("endpoint closed")

    # -- periodic -----------------------------------------------------------

    def _ensure_sync(self) -> None:
        if self._sync_timer is None and self.state is not State.CLOSED:
            self._sync_timer = self.net.call_later(self.config.sync_ms, self._sync)

    def _sync(self) -> None:
        self._sync_timer = None
        if self.state is State.CLOSED:
            return
        now = self.net.now
        # receiver side
        if self._rcv_next != self._last_ack_sent or self._ack_wanted:
            self._send_ack()
        if self._rcv_loss:
            self._renak(now)
        # sender side
        self.rate_control.on_sync()
        if self._unacked and not self._loss_heap:
            exp = max(4 * self.rtt_est_ms + self.config.sync_ms, 20.0) * (2 ** min(self._exp_count, 6))
            if now - self._last_progress > exp:
                self._expire()
        if self.state is State.CLOSING and not self._unacked and not self._pending and not self._express:
            self._control(Kind.KEEPALIVE, flags=Flag.CLOSE)
            self.abort("closed")
            return
        if self._unacked or self._pending or self._express or self._rcv_loss or self._ack_wanted \
                or self._rcv_next != self._last_ack_sent:
            self._sync_timer = self.net.call_later(self.config.sync_ms, self._sync)

    def _expire(self) -> None:
        self._exp_count += 1
        self._last_progress = self.net.now
        unknown = [s for s in self._unacked if s > self._peer_highest]
        if not unknown:
            unknown = [self._snd_una] if self._snd_una in self._unacked else []
        for s in unknown:
            if s not in self._loss_set:
                self._loss_set.add(s)
                heapq.heappush(self._loss_heap, s)
        self._kick()

    def _renak(self, now: float) -> None:
        interval = max(1.5 * self._receiver_rtt() + self.config.sync_ms, 20.0)
        stale = [s for s, t in self._rcv_loss.items() if now - t >= interval]
        if stale:
            stale.sort()
            for s in stale:
                self._rcv_loss[s] = now
            self._send_nak(stale)

    def _receiver_rtt(self) -> float:
        if not self._rtt_sampled and self._peer_rtt_ms is not None:
            return self._peer_rtt_ms
        return self.rtt_est_ms

    def _keepalive(self) -> None:
        self._keepalive_timer = None
        if self.state is State.CLOSED:
            return
        now = self.net.now
        if now - self._last_recv > self.config.idle_timeout_ms:
            self.abort("peer silent")
            return
        if now - self._last_send >= self.config.keepalive_ms * 0.5 and self.state is not State.CONNECTING:
            self._control(Kind.KEEPALIVE)
        self._keepalive_timer = self.net.call_later(self.config.keepalive_ms, self._keepalive)

    # -- receiving ----------------------------------------------------------

    def _on_frame(self, fr) -> None:
        self._last_recv = self.net.now
        kind = fr.kind
        if kind == Kind.DATA or kind == Kind.MSG:
            self._on_sequenced(fr)
        elif kind == Kind.ACK:
            self._on_ack(fr)
        elif kind == Kind.NAK:
            self._on_nak(fr)
        elif kind == Kind.KEEPALIVE:
            if fr.flags & Flag.CLOSE:
                self.eof = True
                if self.state is State.OPEN and not self._pending and not self._express and not self._unacked:
                    self.abort("closed by peer")
                elif self.state is State.OPEN:
                    self.close()

    def _on_sequenced(self, fr) -> None:
        seq = unwrap_seq(fr.seq, self._rcv_next)
        if fr.ack:
            self._peer_rtt_ms = fr.ack / 1000.0
        if seq < self._rcv_next or seq in self._rcv_buf:
            self._ack_wanted = True
            self._ensure_sync()
            return
        self._rcv_loss.pop(seq, None)
        if seq > self._rcv_highest:
            start = max(self._rcv_highest + 1, self._rcv_next)
            if seq > start:
                now = self.net.now
                missing = range(start, seq)
                for s in missing:
                    self._rcv_loss[s] = now
                self._send_nak(missing)
            self._rcv_highest = seq
        now = self.net.now
        if seq != self._rcv_next:
            self._rcv_buf[seq] = (fr, now)
            self._ensure_sync()
            return
        self._deliver(fr)
        arrival = now
        nxt = seq + 1
        buf = self._rcv_buf
        while nxt in buf:
            fr, arrival = buf.pop(nxt)
            self._deliver(fr)
            nxt += 1
        self._rcv_next = nxt
        self._last_inorder_arrival = arrival
        self._ensure_sync()

    def _deliver(self, fr) -> None:
        n = len(fr.payload)
        self.stats.bytes_received += n
        if fr.kind == Kind.DATA:
            if n:
                self.stream += fr.payload
            if fr.flags & Flag.FIN:
                self.eof = True
            return
        key = (fr.request_id, fr.flags & (Flag.REQUEST | Flag.RESPONSE))
        parts = self._frag.get(key)
        if parts is None:
            parts = self._frag[key] = []
        parts.append(fr.payload)
        if fr.flags & Flag.LAST:
            del self._frag[key]
            data = b"".join(parts)
            if fr.flags & Flag.REQUEST:
                self._on_request(fr.request_id, data)
            elif fr.flags & Flag.RESPONSE:
                self._on_response(fr.request_id, data, fr.flags)

    def _on_request(self, rid: int, data: bytes) -> None:
        cached = self._answered.get(rid)
        if cached is not None:
            # duplicate request id: answer again without re-running the handler
            self._queue([Kind.MSG, Flag.RESPONSE | cached[1], rid, memoryview(cached[0]), 0])
            self._kick()
            return
        self.net.call_soon(self._dispatch, Request(self, rid, data))

    def _dispatch(self, req: Request) -> None:
        if self.state is State.CLOSED:
            return
        handler = self.handler
        if handler is None:
            req.fail("no handler")
            return
        try:
            result = handler(req)
        except Exception as exc:  # handler errors go back to the caller
            log.debug("handler error on %r: %s", self, exc)
            req.fail(f"{type(exc).__name__}: {exc}")
            return
        if result is not None and result is not DEFERRED:
            req.respond(result)

    def _on_response(self, rid: int, data: bytes, flags: int) -> None:
        entry = self._waiting.pop(rid, None)
        if entry is None:
            return
        cb, timer = entry
        timer.cancel()
        result: Any = RemoteError(data.decode(errors="replace")) if flags & Flag.ERROR else data
        self.net.call_soon(cb, result)

    def _request_timed_out(self, rid: int) -> None:
        entry = self._waiting.pop(rid, None)
        if entry is not None:
            entry[0](Timeout(f"request {rid} to {self.remote} timed out"))

    def _send_ack(self) -> None:
        self._ack_wanted = False
        self._last_ack_sent = self._rcv_next
        delay_us = int(max(0.0, self.net.now - self._last_inorder_arrival) * 1000)
        body = _ACK_BODY.pack(delay_us & 0xFFFFFFFF, self._rcv_highest & 0xFFFFFFFF)
        self._control(Kind.ACK, body, ack=self._rcv_next)

    def _send_nak(self, seqs) -> None:
        ranges: list[tuple[int, int]] = []
        for s in seqs:
            if ranges and ranges[-1][1] == s - 1:
                ranges[-1] = (ranges[-1][0], s)
            else:
                ranges.append((s, s))
        per_frame = MAX_PAYLOAD // _RANGE.size
        for i in range(0, len(ranges), per_frame):
            body = b"".join(_RANGE.pack(a & 0xFFFFFFFF, b & 0xFFFFFFFF)
                            for a, b in ranges[i:i + per_frame])
            self._control(Kind.NAK, body)

    def _on_ack(self, fr) -> None:
        ack = unwrap_seq(fr.ack, self._snd_una)
        delay_us, highest = _ACK_BODY.unpack(fr.payload[:8]) if len(fr.payload) >= 8 else (0, 0)
        highest = unwrap_seq(highest, self._snd_una)
        if highest > self._peer_highest:
            self._peer_highest = highest
        if ack <= self._snd_una or ack > self._snd_next:
            return
        now = self.net.now
        last = ack - 1
        sent_at = self._send_time.get(last)
        if sent_at is not None and last not in self._retx:
            sample = now - sent_at - delay_us / 1000.0
            if sample > 0:
                if self._rtt_sampled:
                    self.rtt_est_ms = 0.875 * self.rtt_est_ms + 0.125 * sample
                else:
                    self.rtt_est_ms = sample
                    self._rtt_sampled = True
        unacked = self._unacked
        send_time = self._send_time
        retx = self._retx
        delivered = 0
        for s in range(self._snd_una, ack):
            item = unacked.pop(s, None)
            if item is not None:
                delivered += len(item[3])
            send_time.pop(s, None)
            retx.discard(s)
        self.stats.bytes_delivered += delivered
        self._snd_una = ack
        self._last_progress = now
        self._exp_count = 0
        self.rate_control.on_ack()

    def _on_nak(self, fr) -> None:
        self.stats.naks_received += 1
        body = fr.payload
        added = False
        for i in range(0, len(body) - len(body) % _RANGE.size, _RANGE.size):
            a, b = _RANGE.unpack_from(body, i)
            a = unwrap_seq(a, self._snd_una)
            b = unwrap_seq(b, a)
            for s in range(max(a, self._snd_una), min(b, self._snd_next - 1) + 1):
                if s in self._unacked:
                    if s not in self._loss_set:
                        self._loss_set.add(s)
                        heapq.heappush(self._loss_heap, s)
                        added = True
        if added:
            # re-reports of losses already queued for resend are not new congestion
            self.rate_control.on_nak()
            self._kick()

    # -- handshake ----------------------------------------------------------

    def _start_handshake(self, callback: Callable[[Any], None], timeout_ms: float) -> None:
        self._connect_cb = callback
        self._handshake_sent_at = self.net.now
        self._handshake_deadline = self.net.now + timeout_ms
        self._send_handshake()

    def _send_handshake(self) -> None:
        self._handshake_timer = None
        if self.state is not State.CONNECTING:
            return
        now = self.net.now
        if now >= self._handshake_deadline:
            cb, self._connect_cb = self._connect_cb, None
            self.abort("handshake timeout")
            if cb is not None:
                cb(Timeout(f"connect to {self.remote} timed out"))
            return
        self._handshake_sent_at = now
        self._control(Kind.HANDSHAKE, flags=Flag.REQUEST, rid=self.nonce)
        delay = min(self.config.handshake_retry_ms, self._handshake_deadline - now)
        self._handshake_timer = self.net.call_later(delay, self._send_handshake)

    def _on_handshake_reply(self, fr) -> None:
        if self.state is not State.CONNECTING or fr.request_id != self.nonce:
            return
        now = self.net.now
        self.rtt_est_ms = max(now - self._handshake_sent_at, 0.001)
        self.state = State.OPEN
        self._next_send_time = now
        self._last_progress = now
        if self._handshake_timer is not None:
            self._handshake_timer.cancel()
            self._handshake_timer = None
        cb, self._connect_cb = self._connect_cb, None
        if self._pending or self._express:
            self._kick()
        if cb is not None:
            self.net.call_soon(cb, self)


class Listener:
    def __init__(self, mux: "_Mux", handler: Callable[[Request], Any] | None) -> None:
        self.mux = mux
        self.handler = handler
        self._accepted: deque[Connection] = deque()
        self.accepted_count = 0

    def accept(self, timeout_ms: float | None = 0.0) -> Connection | None:
        if not self._accepted and timeout_ms:
            self.mux.net.run_until(lambda: bool(self._accepted), timeout_ms)
        return self._accepted.popleft() if self._accepted else None

    def close(self) -> None:
        if self.mux.listener is self:
            self.mux.listener = None


class _Mux:
    """Per-endpoint demultiplexer: one connection per remote address."""

    def __init__(self, ep, config: TransportConfig) -> None:
        self.ep = ep
        self.net = ep.net
        self.config = config
        self.conns: dict[Address, Connection] = {}
        self.listener: Listener | None = None
        ep.handler = self._on_datagram

    def _forget(self, conn: Connection) -> None:
        if self.conns.get(conn.remote) is conn:
            del self.conns[conn.remote]

    def shutdown(self) -> None:
        for conn in list(self.conns.values()):
            conn.abort("shutdown")
        self.listener = None

    def connect_async(self, remote: Address, callback: Callable[[Any], None],
                      timeout_ms: float) -> Connection:
        old = self.conns.get(remote)
        if old is not None:
            old.abort("replaced")
        conn = Connection(self, remote, _next_nonce(self.net), initiator=True)
        if self.listener is not None:
            conn.handler = self.listener.handler
        self.conns[remote] = conn
        conn._start_handshake(callback, timeout_ms)
        return conn

    def _on_datagram(self, dg: Datagram) -> None:
        try:
            fr = decode_frame(dg.payload)
        except FrameError:
            return
        conn = self.conns.get(dg.src)
        if fr.kind == Kind.HANDSHAKE:
            self._on_handshake(dg.src, fr, conn)
            return
        if conn is not None and conn.state is not State.CONNECTING:
            conn._on_frame(fr)

    def _on_handshake(self, src: Address, fr, conn: Connection | None) -> None:
        if fr.flags & Flag.RESPONSE:
            if conn is not None:
                conn._on_handshake_reply(fr)
            return
        if conn is not None and not conn.initiator and conn.nonce == fr.request_id:
            conn._control(Kind.HANDSHAKE, flags=Flag.RESPONSE, rid=fr.request_id)
            return
        if self.listener is None:
            return
        migrate = None
        if conn is not None:
            if conn.state is State.CONNECTING:
                # simultaneous open: the lower address keeps its own attempt
                if self.ep.addr < src:
                    return
                migrate = conn
                conn._connect_cb = None
                conn.abort("superseded")
            else:
                conn.abort("peer reconnected")
        conn = Connection(self, src, fr.request_id, initiator=False)
        conn.handler = self.listener.handler
        self.conns[src] = conn
        conn._control(Kind.HANDSHAKE, flags=Flag.RESPONSE, rid=fr.request_id)
        if migrate is not None:
            conn._adopt(migrate)
        if self.listener.handler is None:
            self.listener._accepted.append(conn)
        self.listener.accepted_count += 1


def _next_nonce(net) -> int:
    # per-network counter keeps wire bytes identical across same-seed runs
    counter = getattr(net, "_transport_nonces", None)
    if counter is None:
        counter = net._transport_nonces = itertools.count(1)
    return next(counter)


def get_mux(ep, config: TransportConfig | None = None) -> _Mux:
    mux = getattr(ep, "_transport_mux", None)
    if mux is None:
        mux = _Mux(ep, config or TransportConfig())
        ep._transport_mux = mux
    return mux


# Functional surface -------------------------------------------------------

def listen(ep, handler: Callable[[Request], Any] | None = None,
           config: TransportConfig | None = None) -> Listener:
    mux = get_mux(ep, config)
    mux.listener = Listener(mux, handler)
    return mux.listener


def connect_async(ep, remote: Address, callback: Callable[[Any], None],
                  timeout_ms: float = 3000.0, config: TransportConfig | None = None) -> Connection:
    return get_mux(ep, config).connect_async(remote, callback, timeout_ms)


def connect(ep, remote: Address, timeout_ms: float = 3000.0,
            config: TransportConfig | None = None) -> Connection:
    box: list = []
    connect_async(ep, remote, box.append, timeout_ms, config)
    ep.net.run_until(lambda: bool(box))
    if isinstance(box[0], BaseException):
        raise box[0]
    return box[0]


def send_stream(conn: Connection, data: bytes) -> None:
    conn.send(data)


def recv_stream(conn: Connection, n: int, timeout_ms: float | None = 30_000.0) -> bytes:
    return conn.recv(n, timeout_ms)


def send_request(conn: Connection, msg: bytes, timeout_ms: float | None = None) -> bytes:
    return conn.request(msg, timeout_ms)


def conn_stats(conn: Connection) -> TransportStats:
    return conn.conn_stats()
