import random

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

import oracles
from sectorsphere.cluster import SimCluster
from sectorsphere.errors import (
    AccessDenied,
    AllReplicasDown,
    ChunkCorrupt,
    NotEnoughNodes,
    NotFound,
)
from sectorsphere.routing import hash_id
from sectorsphere.storage import ActionKind, ChunkKey, ReplicationAction, download, list_files, locate, upload

CHUNK = 1024


@pytest.fixture(scope="module")
def cluster():
    return SimCluster(5, seed=4, chunk_size=CHUNK).start()


@pytest.fixture
def fresh():
    return SimCluster(4, seed=8, chunk_size=CHUNK).start()


def test_upload_reports_metadata(cluster):
    cl = cluster.client("alice")
    meta = upload(cl, "meta/ten", b"0123456789")
    assert (meta.size_bytes, meta.chunk_count, meta.owner, meta.version) == (10, 1, "alice", 1)
    assert len(set(meta.replicas[0])) == 3


def test_three_chunks_split(cluster):
    cl = cluster.client("alice")
    data = bytes(range(256)) * 10
    meta = upload(cl, "meta/split", data)
    assert meta.chunk_count == 3
    assert [meta.chunk_len(i) for i in range(3)] == [1024, 1024, 512]
    assert download(cl, "meta/split") == data


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.binary(max_size=4 * CHUNK))
def test_roundtrip(cluster, data):
    cl = cluster.client("alice")
    upload(cl, "rt/blob", data)
    assert download(cl, "rt/blob") == data


def test_metadata_on_ring_successor(cluster):
    cl = cluster.client("alice")
    ids = {n.chord.id: n for n in cluster.nodes}
    for i in range(10):
        name = f"place/{i}"
        upload(cl, name, b"x")
        owner = ids[oracles.successor(ids, hash_id(name, 16), 16)]
        assert owner.meta.get(name) is not None


def test_locate_from_any_server(cluster):
    upload(cluster.client("alice"), "loc/f", bytes(3000))
    views = [locate(cluster.client(None, servers=[a]), "loc/f") for a in cluster.addrs]
    assert all(v == views[0] for v in views)
    assert all(len(reps) == 3 for reps in views[0])


def test_locate_unknown(cluster):
    with pytest.raises(NotFound):
        locate(cluster.client(), "no/such/file")


def test_unauthorized_overwrite_denied(cluster):
    upload(cluster.client("alice"), "acl/f", b"original")
    with pytest.raises(AccessDenied):
        upload(cluster.client("mallory"), "acl/f", b"evil")
    with pytest.raises(AccessDenied):
        cluster.client("mallory").delete("acl/f")
    assert download(cluster.client(None), "acl/f") == b"original"


def test_community_writers_gate_creation():
    c = SimCluster(3, seed=1, chunk_size=CHUNK, community_writers={"alice"}).start()
    with pytest.raises(AccessDenied):
        upload(c.client("eve"), "x", b"data")
    with pytest.raises(NotFound):
        locate(c.client(), "x")
    upload(c.client("alice"), "x", b"data")
    assert download(c.client(None), "x") == b"data"


def test_writers_may_overwrite(cluster):
    cl = cluster.client("alice")
    upload(cl, "ver/f", b"one", writers={"bob"})
    meta = upload(cluster.client("bob"), "ver/f", b"two")
    assert meta.version == 2 and meta.owner == "bob"
    assert download(cl, "ver/f") == b"two"


def test_listing(fresh):
    cl = fresh.client("alice")
    assert list_files(cl, "") == []
    for name in ("a/1", "a/2", "b/1"):
        upload(cl, name, b"z")
    assert sorted(m.name for m in list_files(cl, "a/")) == ["a/1", "a/2"]
    assert len(list_files(cl, "")) == 3


def test_delete_and_recreate(fresh):
    cl = fresh.client("alice")
    upload(cl, "d", b"abc")
    upload(cl, "d", b"abcd")
    cl.delete("d")
    with pytest.raises(NotFound):
        locate(cl, "d")
    with pytest.raises(NotFound):
        cl.delete("d")
    assert upload(cl, "d", b"new").version == 1
    assert sum(len(n.chunks) for n in fresh.nodes) == 3


def test_failover_to_another_replica(fresh):
    cl = fresh.client("alice")
    data = random.Random(1).randbytes(5000)
    meta = upload(cl, "fo", data)
    holder = meta.replicas[0][0]
    if holder == fresh.coordinator.addr:
        holder = meta.replicas[0][1]
    fresh.kill(holder)
    assert download(fresh.client(None, servers=[fresh.coordinator.addr]), "fo") == data


def test_all_replicas_down():
    c = SimCluster(4, seed=2, chunk_size=CHUNK, target_replicas=1).start()
    cl = c.client("alice")
    for i in range(8):
        meta = upload(cl, f"f{i}", b"payload")
        holder = meta.replicas[0][0]
        if holder != c.coordinator.addr:
            break
    c.kill(holder)
    with pytest.raises(AllReplicasDown):
        download(c.client(None, servers=[c.coordinator.addr]), f"f{i}")


def test_corrupt_replicas_detected(fresh):
    cl = fresh.client("alice")
    meta = upload(cl, "rot", b"important bytes")
    for a in meta.replicas[0]:
        fresh.node(a).corrupt_reads = 10
    with pytest.raises(ChunkCorrupt):
        download(cl, "rot")
    fresh.node(meta.replicas[0][0]).corrupt_reads = 0
    assert download(cl, "rot") == b"important bytes"


def test_no_nodes_no_upload():
    c = SimCluster(1, seed=3, chunk_size=CHUNK).start()
    # a live owner always sees itself, so fake an empty membership view
    c.nodes[0].placement_view = lambda: {}
    with pytest.raises(NotEnoughNodes):
        upload(c.client("alice"), "x", b"1")


def test_audit_restores_replicas(fresh):
    cl = fresh.client("alice")
    rng = random.Random(3)
    files = {f"r/{i}": rng.randbytes(rng.randrange(1, 4000)) for i in range(6)}
    for name, data in files.items():
        upload(cl, name, data)
    assert fresh.audit_round().clean
    fresh.kill(2)
    fresh.wait_dead_detected()
    fresh.stabilize()
    assert fresh.under_replicated()
    rounds = 0
    while fresh.under_replicated() and rounds < 5:
        fresh.audit_round()
        rounds += 1
    assert fresh.under_replicated() == []
    reader = fresh.client(None, servers=[fresh.coordinator.addr])
    for name, data in files.items():
        assert download(reader, name) == data
        assert all(len(r) == 3 for r in locate(reader, name))


def test_create_replica_survives_corrupt_copy(fresh):
    cl = fresh.client("alice")
    meta = upload(cl, "cp", b"chunk body" * 20)
    src = meta.replicas[0][0]
    tgt = next(a for a in fresh.addrs if a not in meta.replicas[0])
    fresh.node(src).corrupt_reads = 1
    act = ReplicationAction(ActionKind.CREATE_REPLICA, "cp", 0, meta.version, src, tgt)
    assert fresh.coordinator.apply_replication_action(act, crc=meta.checksums[0])
    key = ChunkKey("cp", 0, meta.version)
    assert fresh.node(tgt).chunks.get(key) == b"chunk body" * 20
    assert fresh.node(tgt).chunks.crc(key) == meta.checksums[0]
    drop = ReplicationAction(ActionKind.DROP_REPLICA, "cp", 0, meta.version, None, tgt)
    assert fresh.coordinator.apply_replication_action(drop)
    assert not fresh.node(tgt).chunks.has(key)


def test_metadata_persists_on_disk(tmp_path):
    c = SimCluster(3, seed=5, chunk_size=CHUNK, data_dir=str(tmp_path)).start()
    upload(c.client("alice"), "keep", b"persist me")
    again = SimCluster(3, seed=5, chunk_size=CHUNK, data_dir=str(tmp_path)).start()
    assert download(again.client(None), "keep") == b"persist me"
