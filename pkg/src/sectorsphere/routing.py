"""Chord routing: names hash onto a ring of m-bit ids; each id is owned by its
successor node.

Lookups are iterative (the asking node drives every hop) so the caller owns
all timeouts. ``ChordNode`` holds one node's routing state and talks to other
nodes through a *links* object, either ``RpcLinks`` (real messages over the
transport) or ``DirectLinks`` (in-process calls, for fast logic tests).
"""

from __future__ import annotations

import hashlib
import logging
from typing import Any, Callable, NamedTuple, Protocol

from .codec import Reader, Writer
from .errors import JoinFailed, LookupTimeout, SectorError, Unreachable
from .net import Address

log = logging.getLogger(__name__)

SUCCESSOR_LIST_LEN = 4

# routing message types
PING = 0x01
GET_SUCCESSOR = 0x02
GET_PREDECESSOR = 0x03
FIND_SUCCESSOR = 0x04
NOTIFY = 0x05


def hash_id(key: bytes | str, m: int = 160) -> int:
    """SHA-1 of ``key`` truncated to its top ``m`` bits."""
    if not 1 <= m <= 160:
        raise ValueError("m must be in [1, 160]")
    if isinstance(key, str):
        key = key.encode("utf-8")
    return int.from_bytes(hashlib.sha1(key).digest(), "big") >> (160 - m)


def in_ring_interval(x: int, a: int, b: int, inclusive_end: bool = False) -> bool:
    """Is ``x`` in the ring interval (a, b), or (a, b] with ``inclusive_end``?

    When ``a == b`` the interval wraps the whole ring (minus ``a`` itself
    unless the end is inclusive).
    """
    if x == b:
        return inclusive_end
    if a < b:
        return a < x < b
    if a > b:
        return x > a or x < b
    return x != a


class NodeRef(NamedTuple):
    id: int
    addr: Address


class Links(Protocol):
    def find_step(self, addr: Address, key: int, avoid: frozenset[int]) -> tuple[bool, NodeRef, list[NodeRef]]: ...
    def get_successors(self, addr: Address) -> list[NodeRef]: ...
    def get_predecessor(self, addr: Address) -> NodeRef | None: ...
    def notify(self, addr: Address, ref: NodeRef) -> None: ...
    def ping(self, addr: Address) -> None: ...


class ChordNode:
    def __init__(self, addr: Address, m: int = 160, links: Links | None = None,
                 r: int = SUCCESSOR_LIST_LEN, node_id: int | None = None) -> None:
        self.m = m
        self.ring = 1 << m
        self.r = r
        self.id = hash_id(str(addr), m) if node_id is None else node_id % self.ring
        self.addr = addr
        self.ref = NodeRef(self.id, addr)
        self.links = links
        self._successors: list[NodeRef] = [self.ref]
        self.predecessor: NodeRef | None = None
        self.finger: list[NodeRef | None] = [None] * m
        self.finger[0] = self.ref
        self.next_finger = 0
        self.last_hops = 0
        self.max_hops = 4 * m + 8

    def __repr__(self) -> str:
        return f"ChordNode({self.addr}, id={self.id})"

    # -- state --------------------------------------------------------------

    @property
    def successor_list(self) -> list[NodeRef]:
        return self._successors

    @successor_list.setter
    def successor_list(self, refs: list[NodeRef]) -> None:
        seen: set[int] = set()
        out: list[NodeRef] = []
        for ref in refs:
            if ref.id in seen:
                continue
            seen.add(ref.id)
            out.append(ref)
            if len(out) == self.r:
                break
        self._successors = out or [self.ref]
        self.finger[0] = self._successors[0]

    @property
    def successor(self) -> NodeRef:
        return self._successors[0]

    def finger_start(self, i: int) -> int:
        return (self.id + (1 << i)) % self.ring

    # -- answering remote queries -------------------------------------------

    def find_step(self, key: int, avoid: frozenset[int] = frozenset()) -> tuple[bool, NodeRef, list[NodeRef]]:
        succs = [s for s in self._successors if s.id not in avoid] or [self.ref]
        succ = succs[0]
        if in_ring_interval(key, self.id, succ.id, inclusive_end=True):
            return True, succ, succs
        nxt = self.closest_preceding_finger(key, avoid)
        if nxt == self.ref:
            return True, succ, succs
        return False, nxt, []

    def notify(self, ref: NodeRef) -> None:
        if ref.id == self.id:
            return
        pred = self.predecessor
        if pred is None or in_ring_interval(ref.id, pred.id, self.id):
            self.predecessor = ref
        if self.successor == self.ref:
            self.successor_list = [ref]

    # -- lookups ------------------------------------------------------------

    def closest_preceding_finger(self, key: int, avoid: frozenset[int] = frozenset()) -> NodeRef:
        best = self.ref
        best_dist = 0
        me = self.id
        ring = self.ring
        for cand in (*self.finger, *self._successors):
            if cand is None or cand.id == me or cand.id in avoid:
                continue
            if in_ring_interval(cand.id, me, key):
                d = (cand.id - me) % ring
                if d > best_dist:
                    best, best_dist = cand, d
        return best

    def lookup(self, key: int) -> tuple[NodeRef, int, list[NodeRef]]:
        """Resolve ``key`` to (owner, hops, owner-and-fallbacks)."""
        key %= self.ring
        done, ref, succs = self.find_step(key)
        if done:
            self.last_hops = 0
            return ref, 0, succs
        return self._iterate(ref, key, hops=0, trail=[self.ref])

    def find_successor(self, key: int) -> NodeRef:
        return self.lookup(key)[0]

    def _iterate(self, nxt: NodeRef | Address, key: int, hops: int,
                 trail: list[NodeRef]) -> tuple[NodeRef, int, list[NodeRef]]:
        avoid: set[int] = set()
        while True:
            if hops > self.max_hops:
                raise LookupTimeout(f"lookup of {key} exceeded {self.max_hops} hops")
            addr = nxt.addr if isinstance(nxt, NodeRef) else nxt
            try:
                done, ref, succs = self._find_step_at(addr, key, frozenset(avoid))
            except Unreachable:
                hops += 1
                if isinstance(nxt, NodeRef):
                    avoid.add(nxt.id)
                    self.handle_node_departure(nxt.id)
                if not trail:
                    raise LookupTimeout(f"no live route towards {key}")
                # back up one hop and ask again, steering around the dead node
                nxt = trail.pop()
                continue
            hops += 1
            if done:
                self.last_hops = hops
                return ref, hops, succs
            if isinstance(nxt, NodeRef):
                trail.append(nxt)
            nxt = ref

    def lookup_async(self, key: int, callback: Callable[[Any], None]) -> None:
        """Non-blocking ``lookup``: ``callback`` gets (owner, hops, succs) or an error."""
        key %= self.ring
        done, ref, succs = self.find_step(key)
        if done:
            callback((ref, 0, succs))
            return
        trail = [self.ref]
        avoid: set[int] = set()
        state = {"hops": 0, "nxt": ref}

        def step() -> None:
            if state["hops"] > self.max_hops:
                callback(LookupTimeout(f"lookup of {key} exceeded {self.max_hops} hops"))
                return
            nxt = state["nxt"]
            if nxt.addr == self.addr:
                answered(self.find_step(key, frozenset(avoid)))
            else:
                self.links.find_step_async(nxt.addr, key, frozenset(avoid), answered)

        def answered(res: Any) -> None:
            state["hops"] += 1
            nxt = state["nxt"]
            if isinstance(res, Unreachable):
                avoid.add(nxt.id)
                self.handle_node_departure(nxt.id)
                if not trail:
                    callback(LookupTimeout(f"no live route towards {key}"))
                    return
                state["nxt"] = trail.pop()
                step()
                return
            if isinstance(res, BaseException):
                callback(res)
                return
            done, ref, succs = res
            if done:
                self.last_hops = state["hops"]
                callback((ref, state["hops"], succs))
                return
            trail.append(nxt)
            state["nxt"] = ref
            step()

        step()

    def _find_step_at(self, addr: Address, key: int, avoid: frozenset[int]):
        if addr == self.addr:
            return self.find_step(key, avoid)
        return self.links.find_step(addr, key, avoid)

    # -- membership ---------------------------------------------------------

    def join(self, bootstrap: Address | None) -> None:
        self.predecessor = None
        self.finger = [None] * self.m
        if bootstrap is None or bootstrap == self.addr:
            self.successor_list = [self.ref]
            return
        try:
            succ, _, succs = self._iterate(bootstrap, self.id, hops=0, trail=[])
        except (Unreachable, LookupTimeout) as exc:
            raise JoinFailed(f"bootstrap {bootstrap} unreachable: {exc}") from exc
        if succ.id == self.id and succ.addr != self.addr:
            raise JoinFailed(f"node id collision with {succ.addr}")
        self.successor_list = [s for s in succs if s.id != self.id] or [succ]

    def stabilize_step(self) -> None:
        while True:
            succ = self.successor
            if succ == self.ref:
                x = self.predecessor
                break
            try:
                x = self.links.get_predecessor(succ.addr)
                break
            except Unreachable:
                self.handle_node_departure(succ.id)
        if x is not None and x.id != self.id and in_ring_interval(x.id, self.id, succ.id) \
                and x.id != succ.id:
            try:
                if x.addr != self.addr:
                    self.links.ping(x.addr)
                succ = x
            except Unreachable:
                pass
        if succ == self.ref:
            self.successor_list = [self.ref]
            return
        try:
            succs = self.links.get_successors(succ.addr)
        except Unreachable:
            self.handle_node_departure(succ.id)
            return
        self.successor_list = [succ] + [s for s in succs if s.id != self.id] + [self.ref]
        try:
            self.links.notify(succ.addr, self.ref)
        except Unreachable:
            self.handle_node_departure(succ.id)

    def check_predecessor(self) -> None:
        pred = self.predecessor
        if pred is None or pred.id == self.id:
            return
        try:
            self.links.ping(pred.addr)
        except Unreachable:
            self.handle_node_departure(pred.id)

    def fix_finger_step(self, i: int | None = None) -> None:
        if i is None:
            i = self.next_finger
            self.next_finger = (self.next_finger + 1) % self.m
        if not 0 <= i < self.m:
            raise ValueError(f"finger index {i} out of range")
        if i == 0:
            self.finger[0] = self.successor
            return
        start = self.finger_start(i)
        prev = self.finger[i - 1]
        if prev is not None and in_ring_interval(start, self.id, prev.id, inclusive_end=True):
            self.finger[i] = prev
            return
        try:
            self.finger[i] = self.lookup(start)[0]
        except (LookupTimeout, Unreachable):
            pass

    def fix_all_fingers(self) -> None:
        for i in range(self.m):
            self.fix_finger_step(i)

    def handle_node_departure(self, departed: int) -> None:
        if self.predecessor is not None and self.predecessor.id == departed:
            self.predecessor = None
        if any(s.id == departed for s in self._successors):
            self.successor_list = [s for s in self._successors if s.id != departed]
        self.finger = [None if (f is not None and f.id == departed) else f for f in self.finger]
        self.finger[0] = self.successor

    def maintenance_round(self) -> None:
        self.stabilize_step()
        self.check_predecessor()
        self.fix_finger_step()

    # -- non-blocking maintenance (for periodic timers) ---------------------

    def stabilize_async(self, done: Callable[[], None]) -> None:
        succ = self.successor
        if succ == self.ref:
            self._stabilize_with(succ, self.predecessor, done)
            return

        def got_pred(res: Any) -> None:
            if isinstance(res, BaseException):
                self.handle_node_departure(succ.id)
                done()
                return
            self._stabilize_with(succ, res, done)
        self.links.get_predecessor_async(succ.addr, got_pred)

    def _stabilize_with(self, succ: NodeRef, x: NodeRef | None, done: Callable[[], None]) -> None:
        def adopt(new_succ: NodeRef) -> None:
            if new_succ == self.ref:
                self.successor_list = [self.ref]
                done()
                return

            def got_succs(res: Any) -> None:
                if isinstance(res, BaseException):
                    self.handle_node_departure(new_succ.id)
                    done()
                    return
                self.successor_list = [new_succ] + [s for s in res if s.id != self.id] + [self.ref]

                def notified(res: Any) -> None:
                    if isinstance(res, BaseException):
                        self.handle_node_departure(new_succ.id)
                    done()
                self.links.notify_async(new_succ.addr, self.ref, notified)
            self.links.get_successors_async(new_succ.addr, got_succs)

        if x is not None and x.id != self.id and x.id != succ.id and in_ring_interval(x.id, self.id, succ.id):
            if x.addr == self.addr:
                adopt(x)
                return
            self.links.ping_async(x.addr, lambda res: adopt(succ if isinstance(res, BaseException) else x))
            return
        adopt(succ)

    def check_predecessor_async(self, done: Callable[[], None]) -> None:
        pred = self.predecessor
        if pred is None or pred.id == self.id:
            done()
            return

        def pinged(res: Any) -> None:
            if isinstance(res, BaseException):
                self.handle_node_departure(pred.id)
            done()
        self.links.ping_async(pred.addr, pinged)

    def fix_finger_async(self, done: Callable[[], None]) -> None:
        i = self.next_finger
        self.next_finger = (self.next_finger + 1) % self.m
        start = self.finger_start(i)
        prev = self.finger[i - 1] if i else None
        if i == 0 or (prev is not None and in_ring_interval(start, self.id, prev.id, inclusive_end=True)):
            self.finger[i] = self.successor if i == 0 else prev
            done()
            return

        def found(res: Any) -> None:
            if not isinstance(res, BaseException):
                self.finger[i] = res[0]
            done()
        self.lookup_async(start, found)

    def maintenance_async(self, done: Callable[[], None]) -> None:
        self.stabilize_async(lambda: self.check_predecessor_async(lambda: self.fix_finger_async(done)))


class DirectLinks:
    """In-process links: calls the target ``ChordNode`` directly."""

    def __init__(self) -> None:
        self.nodes: dict[Address, ChordNode] = {}
        self.dead: set[Address] = set()
        self.calls = 0

    def add(self, node: ChordNode) -> ChordNode:
        node.links = self
        self.nodes[node.addr] = node
        return node

    def kill(self, addr: Address) -> None:
        self.dead.add(addr)

    def _target(self, addr: Address) -> ChordNode:
        self.calls += 1
        node = self.nodes.get(addr)
        if node is None or addr in self.dead:
            raise Unreachable(str(addr))
        return node

    def find_step(self, addr, key, avoid):
        return self._target(addr).find_step(key, avoid)

    def find_step_async(self, addr, key, avoid, callback):
        try:
            res = self.find_step(addr, key, avoid)
        except Unreachable as exc:
            res = exc
        callback(res)

    def get_successors(self, addr):
        return list(self._target(addr).successor_list)

    def _async(self, fn, callback, *args):
        try:
            res = fn(*args)
        except Unreachable as exc:
            res = exc
        callback(res)

    def get_successors_async(self, addr, callback):
        self._async(self.get_successors, callback, addr)

    def get_predecessor_async(self, addr, callback):
        self._async(self.get_predecessor, callback, addr)

    def notify_async(self, addr, ref, callback):
        self._async(self.notify, callback, addr, ref)

    def ping_async(self, addr, callback):
        self._async(self.ping, callback, addr)

    def get_predecessor(self, addr):
        return self._target(addr).predecessor

    def notify(self, addr, ref):
        self._target(addr).notify(ref)

    def ping(self, addr):
        self._target(addr)


def _w_ref(w: Writer, ref: NodeRef, width: int) -> None:
    w.bigint(ref.id, width).addr(ref.addr)


def _r_ref(r: Reader, width: int) -> NodeRef:
    return NodeRef(r.bigint(width), r.addr())


def _width(m: int) -> int:
    return (m + 7) // 8


class RpcLinks:
    """Routing calls encoded as type byte + big-endian fields over ``RpcClient``."""

    def __init__(self, rpc, m: int, timeout_ms: float = 1000.0) -> None:
        self.rpc = rpc
        self.m = m
        self.w = _width(m)
        self.timeout_ms = timeout_ms

    def _find_msg(self, key, avoid) -> bytes:
        w = Writer(FIND_SUCCESSOR).bigint(key, self.w).u32(len(avoid))
        for a in sorted(avoid):
            w.bigint(a, self.w)
        return w.finish()

    def _find_reply(self, r: Reader):
        done = r.flag()
        ref = _r_ref(r, self.w)
        succs = [_r_ref(r, self.w) for _ in range(r.u32())]
        return done, ref, succs

    def find_step(self, addr, key, avoid):
        return self._find_reply(self.rpc.call(addr, self._find_msg(key, avoid), self.timeout_ms))

    def find_step_async(self, addr, key, avoid, callback):
        def done(res: Any) -> None:
            callback(res if isinstance(res, BaseException) else self._find_reply(Reader(res)))
        self.rpc.call_async(addr, self._find_msg(key, avoid), done, self.timeout_ms)

    def get_successors(self, addr):
        r = self.rpc.call(addr, Writer(GET_SUCCESSOR).finish(), self.timeout_ms)
        return [_r_ref(r, self.w) for _ in range(r.u32())]

    def get_predecessor(self, addr):
        r = self.rpc.call(addr, Writer(GET_PREDECESSOR).finish(), self.timeout_ms)
        return _r_ref(r, self.w) if r.flag() else None

    def notify(self, addr, ref):
        w = Writer(NOTIFY)
        _w_ref(w, ref, self.w)
        self.rpc.call(addr, w.finish(), self.timeout_ms)

    def ping(self, addr):
        self.rpc.call(addr, Writer(PING).finish(), self.timeout_ms)

    def _async(self, addr, msg: bytes, parse, callback) -> None:
        def done(res: Any) -> None:
            callback(res if isinstance(res, BaseException) else parse(Reader(res)))
        self.rpc.call_async(addr, msg, done, self.timeout_ms)

    def get_successors_async(self, addr, callback):
        self._async(addr, Writer(GET_SUCCESSOR).finish(),
                    lambda r: [_r_ref(r, self.w) for _ in range(r.u32())], callback)

    def get_predecessor_async(self, addr, callback):
        self._async(addr, Writer(GET_PREDECESSOR).finish(),
                    lambda r: _r_ref(r, self.w) if r.flag() else None, callback)

    def notify_async(self, addr, ref, callback):
        w = Writer(NOTIFY)
        _w_ref(w, ref, self.w)
        self._async(addr, w.finish(), lambda r: None, callback)

    def ping_async(self, addr, callback):
        self._async(addr, Writer(PING).finish(), lambda r: None, callback)


def serve_routing(server, node: ChordNode) -> None:
    """Register the routing handlers of ``node`` on an ``RpcServer``."""
    width = _width(node.m)

    def find(r: Reader, _reply) -> bytes:
        key = r.bigint(width)
        avoid = frozenset(r.bigint(width) for _ in range(r.u32()))
        done, ref, succs = node.find_step(key, avoid)
        w = Writer().flag(done)
        _w_ref(w, ref, width)
        w.u32(len(succs))
        for s in succs:
            _w_ref(w, s, width)
        return w.finish()

    def successors(_r, _reply) -> bytes:
        w = Writer().u32(len(node.successor_list))
        for s in node.successor_list:
            _w_ref(w, s, width)
        return w.finish()

    def predecessor(_r, _reply) -> bytes:
        w = Writer()
        pred = node.predecessor
        w.flag(pred is not None)
        if pred is not None:
            _w_ref(w, pred, width)
        return w.finish()

    def notify(r: Reader, _reply) -> bytes:
        node.notify(_r_ref(r, width))
        return b""

    server.register(PING, lambda _r, _reply: b"")
    server.register(GET_SUCCESSOR, successors)
    server.register(GET_PREDECESSOR, predecessor)
    server.register(FIND_SUCCESSOR, find)
    server.register(NOTIFY, notify)


def oracle_successor(ids, key: int, m: int) -> int:
    """Brute-force owner of ``key``: the first id at or after it on the ring."""
    key %= 1 << m
    ordered = sorted(ids)
    for i in ordered:
        if i >= key:
            return i
    return ordered[0]


__all__ = [
    "ChordNode", "DirectLinks", "NodeRef", "RpcLinks", "SectorError", "hash_id",
    "in_ring_interval", "oracle_successor", "serve_routing",
]
