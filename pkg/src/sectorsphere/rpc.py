"""Typed request/response calls between nodes over the transport.

A request body starts with a message-type byte; a reply starts with a status
byte (0 = ok, otherwise a ``SectorError`` code followed by the message).
Calls addressed to the caller's own server skip the network.
"""

from __future__ import annotations

import logging
from typing import Any, Callable

from .codec import Reader, Writer
from .errors import PeerDown, SectorError, error_for_code
from .net import Address
from .transport import (
    DEFERRED,
    ConnectionClosed,
    RemoteError,
    Request,
    Timeout,
    TransportConfig,
    connect_async,
    get_mux,
    listen,
)

log = logging.getLogger(__name__)

Handler = Callable[[Reader, "Reply"], "bytes | None"]


def _ok(body: bytes) -> bytes:
    return b"\x00" + body


def _err(exc: SectorError) -> bytes:
    return Writer(exc.code).str(str(exc)).finish()


def decode_reply(data: bytes) -> bytes:
    if not data:
        raise SectorError("empty reply")
    if data[0] == 0:
        return data[1:]
    r = Reader(data[1:])
    raise error_for_code(data[0])(r.str())


class Reply:
    """Completion handle for handlers that answer asynchronously."""

    __slots__ = ("_send", "done")

    def __init__(self, send: Callable[[bytes], None]) -> None:
        self._send = send
        self.done = False

    def ok(self, body: bytes = b"") -> None:
        if not self.done:
            self.done = True
            self._send(_ok(body))

    def error(self, exc: SectorError) -> None:
        if not self.done:
            self.done = True
            self._send(_err(exc))


class RpcServer:
    def __init__(self, ep, config: TransportConfig | None = None) -> None:
        self.ep = ep
        self.addr: Address = ep.addr
        self.handlers: dict[int, Handler] = {}
        self.listener = listen(ep, handler=self._on_request, config=config)
        self.requests_handled = 0

    def register(self, msg_type: int, fn: Handler) -> None:
        self.handlers[msg_type] = fn

    def handle(self, data: bytes, send: Callable[[bytes], None]) -> None:
        self.requests_handled += 1
        reply = Reply(send)
        if not data:
            reply.error(SectorError("empty request"))
            return
        fn = self.handlers.get(data[0])
        if fn is None:
            reply.error(SectorError(f"unknown message type {data[0]}"))
            return
        try:
            body = fn(Reader(data[1:]), reply)
        except SectorError as exc:
            reply.error(exc)
            return
        if body is not None:
            reply.ok(body)

    def _on_request(self, req: Request) -> Any:
        self.handle(req.data, req.respond)
        return DEFERRED


class RpcClient:
    """Caches one connection per peer; maps transport failures to Unreachable."""

    def __init__(self, ep, config: TransportConfig | None = None,
                 local: RpcServer | None = None, connect_timeout_ms: float = 1000.0,
                 call_timeout_ms: float = 10_000.0) -> None:
        self.ep = ep
        self.net = ep.net
        self.config = config
        self.local = local
        self.connect_timeout_ms = connect_timeout_ms
        self.call_timeout_ms = call_timeout_ms
        self._conns: dict[Address, Any] = {}
        get_mux(ep, config)

    def _conn(self, addr: Address):
        conn = self._conns.get(addr)
        if conn is None or conn.state.value == "closed":
            mux = get_mux(self.ep)
            conn = mux.conns.get(addr)
            if conn is None or conn.state.value not in ("open", "connecting"):
                conn = connect_async(self.ep, addr, lambda _res: None, self.connect_timeout_ms)
            self._conns[addr] = conn
        return conn

    def drop(self, addr: Address) -> None:
        conn = self._conns.pop(addr, None)
        if conn is not None:
            conn.abort("dropped")

    def call_async(self, addr: Address, data: bytes, callback: Callable[[Any], None],
                   timeout_ms: float | None = None) -> None:
        """``callback`` receives the reply body or a ``SectorError`` instance."""
        if self.local is not None and addr == self.local.addr:
            def local_done(raw: bytes) -> None:
                try:
                    self.net.call_soon(callback, decode_reply(raw))
                except SectorError as exc:
                    self.net.call_soon(callback, exc)
            self.local.handle(data, local_done)
            return

        def done(result: Any) -> None:
            if isinstance(result, (Timeout, ConnectionClosed)):
                if isinstance(result, Timeout):
                    self.drop(addr)
                else:
                    self._conns.pop(addr, None)
                callback(PeerDown(f"{addr}: {result}"))
                return
            if isinstance(result, RemoteError):
                callback(SectorError(str(result)))
                return
            try:
                callback(decode_reply(result))
            except SectorError as exc:
                callback(exc)

        try:
            conn = self._conn(addr)
            conn.request_async(data, done, self.call_timeout_ms if timeout_ms is None else timeout_ms)
        except ConnectionClosed as exc:
            self._conns.pop(addr, None)
            self.net.call_soon(callback, PeerDown(f"{addr}: {exc}"))

    def call(self, addr: Address, data: bytes, timeout_ms: float | None = None) -> Reader:
        box: list = []
        self.call_async(addr, data, box.append, timeout_ms)
        self.net.run_until(lambda: bool(box))
        result = box[0]
        if isinstance(result, BaseException):
            raise result
        return Reader(result)

    def close(self) -> None:
        for addr in list(self._conns):
            self.drop(addr)
