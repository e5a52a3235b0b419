import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sectorsphere.net import (
    Address,
    AddressInUse,
    LinkProfile,
    NotSimulated,
    PayloadTooLarge,
    SimNetwork,
    advance_time,
    bind,
    create_sim_network,
    poll_datagram,
    send_datagram,
    set_link,
)
from sectorsphere.udp import UdpNetwork

A, B = Address("a", 1), Address("b", 1)


def drain(ep):
    out = []
    while (d := poll_datagram(ep)) is not None:
        out.append(d)
    return out


def test_fresh_network_is_empty():
    net = create_sim_network(42)
    assert net.now == 0
    assert not net.is_bound(A)
    assert net.next_event_time() is None


def test_bind_twice_rejected():
    net = create_sim_network(0)
    bind(net, A)
    with pytest.raises(AddressInUse):
        bind(net, A)


def test_loopback():
    net = create_sim_network(0)
    ea = bind(net, A)
    send_datagram(ea, A, b"self")
    advance_time(net, 0)
    assert [d.payload for d in drain(ea)] == [b"self"]


def test_oversized_payload():
    net = create_sim_network(0)
    ea = bind(net, A)
    send_datagram(ea, B, bytes(1472))
    with pytest.raises(PayloadTooLarge):
        send_datagram(ea, B, bytes(2000))


def test_zero_latency_delivers_on_next_step():
    net = create_sim_network(0)
    ea, eb = bind(net, A), bind(net, B)
    send_datagram(ea, B, b"x")
    assert poll_datagram(eb) is None
    net.step()
    assert poll_datagram(eb).payload == b"x"


def test_latency_sets_arrival_time():
    net = create_sim_network(0)
    set_link(net, A, B, LinkProfile(latency_ms=100))
    ea, eb = bind(net, A), bind(net, B)
    send_datagram(ea, B, b"x")
    advance_time(net, 50)
    assert poll_datagram(eb) is None
    advance_time(net, 50)
    d = poll_datagram(eb)
    assert d.payload == b"x" and d.enqueue_time == 0 and net.now == 100


def test_advance_zero_keeps_clock():
    net = create_sim_network(0)
    advance_time(net, 0)
    assert net.now == 0


def test_arrival_order_follows_latency():
    net = create_sim_network(0)
    C = Address("c", 1)
    set_link(net, A, B, LinkProfile(latency_ms=5))
    set_link(net, C, B, LinkProfile(latency_ms=1))
    ea, eb, ec = bind(net, A), bind(net, B), bind(net, C)
    send_datagram(ea, B, b"slow")
    send_datagram(ec, B, b"fast")
    advance_time(net, 10)
    assert [d.payload for d in drain(eb)] == [b"fast", b"slow"]


def test_certain_loss():
    net = create_sim_network(0)
    set_link(net, A, B, LinkProfile(loss_rate=1.0))
    ea, eb = bind(net, A), bind(net, B)
    for _ in range(1000):
        send_datagram(ea, B, b"x")
    advance_time(net, 1)
    assert drain(eb) == []


def test_binomial_loss_count():
    net = create_sim_network(7)
    set_link(net, A, B, LinkProfile(loss_rate=0.1))
    ea, eb = bind(net, A), bind(net, B)
    for _ in range(10_000):
        send_datagram(ea, B, b"x")
    advance_time(net, 1)
    got = len(drain(eb))
    sigma = math.sqrt(10_000 * 0.1 * 0.9)
    assert abs(got - 9000) <= 3 * sigma


@pytest.mark.parametrize("bad", [-0.1, 1.5, float("nan")])
def test_bad_loss_rate_rejected(bad):
    with pytest.raises(ValueError):
        LinkProfile(loss_rate=bad)


def test_advance_on_real_backend_rejected():
    with pytest.raises(NotSimulated):
        advance_time(UdpNetwork(), 1)


def _trace(seed, loss=0.5, jitter=0.0, n=200):
    net = SimNetwork(seed, record_trace=True)
    set_link(net, A, B, LinkProfile(latency_ms=3, loss_rate=loss, jitter_ms=jitter,
                                    bandwidth_bps=1e6))
    ea, _ = bind(net, A), bind(net, B)
    for i in range(n):
        send_datagram(ea, B, i.to_bytes(4, "big"))
        if i % 7 == 0:
            advance_time(net, 1)
    advance_time(net, 1000)
    return net.trace


def test_same_seed_same_trace():
    assert _trace(42) == _trace(42)


def test_different_seed_different_losses():
    assert _trace(42) != _trace(43)


def test_link_streams_are_independent():
    # traffic on a second link must not perturb draws on the first
    def run(noise):
        net = SimNetwork(5, record_trace=True)
        set_link(net, A, B, LinkProfile(loss_rate=0.3))
        C, D = Address("c", 1), Address("d", 1)
        set_link(net, C, D, LinkProfile(loss_rate=0.3))
        ea, ec = bind(net, A), bind(net, C)
        bind(net, B), bind(net, D)
        for i in range(300):
            send_datagram(ea, B, i.to_bytes(2, "big"))
            if noise:
                send_datagram(ec, D, b"n")
        advance_time(net, 1)
        return [t for t in net.trace if t[2] == B]
    assert run(False) == run(True)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 1472), st.floats(0, 5)), min_size=1, max_size=60))
def test_fifo_without_jitter(sends):
    net = SimNetwork(1)
    set_link(net, A, B, LinkProfile(latency_ms=2, bandwidth_bps=5e6))
    ea, eb = bind(net, A), bind(net, B)
    for i, (size, gap) in enumerate(sends):
        send_datagram(ea, B, i.to_bytes(2, "big") + bytes(size - 2 if size > 2 else 0))
        advance_time(net, gap)
    advance_time(net, 10_000)
    ids = [int.from_bytes(d.payload[:2], "big") for d in drain(eb)]
    assert ids == list(range(len(sends)))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 1472), st.floats(0, 3)), min_size=2, max_size=80),
       st.floats(1, 50))
def test_bandwidth_cap(sends, window):
    bw = 2e6
    net = SimNetwork(2, record_trace=True)
    set_link(net, A, B, LinkProfile(latency_ms=1, bandwidth_bps=bw))
    ea, _ = bind(net, A), bind(net, B)
    for size, gap in sends:
        send_datagram(ea, B, bytes(size))
        advance_time(net, gap)
    advance_time(net, 10_000)
    arrivals = [(t, len(p)) for t, _, _, p in net.trace]
    cap = bw * window / 8000.0 + 1472
    for i, (t0, _) in enumerate(arrivals):
        total = sum(n for t, n in arrivals[i:] if t <= t0 + window)
        assert total <= cap + 1e-6


def test_queue_limit_drops_tail():
    net = SimNetwork(0)
    set_link(net, A, B, LinkProfile(bandwidth_bps=1e6, queue_bytes=3000))
    ea, eb = bind(net, A), bind(net, B)
    for _ in range(10):
        send_datagram(ea, B, bytes(1000))
    advance_time(net, 1000)
    assert 3 <= len(drain(eb)) <= 4
    assert net.link(A, B).queue_dropped >= 6
