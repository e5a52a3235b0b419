import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from sectorsphere.apps import (
    LLPR_COLUMNS,
    TERASORT_COLUMNS,
    csv_text,
    gen_points,
    gen_records,
    kmeans_reference,
    kmeans_run,
    llpr,
    llpr_harness,
    teragen,
    terasort,
    upload_points,
    verify_records,
    verify_sorted,
)
from sectorsphere.apps import kmeans as km
from sectorsphere.apps.llpr import local_profile_for
from sectorsphere.apps.terasort import TERA, key_bucket, split_records
from sectorsphere.apps.terasort import register as register_terasort
from sectorsphere.cluster import SimCluster
from sectorsphere.errors import BadDimension, KTooLarge
from sectorsphere.net import LinkProfile, SimNetwork
from sectorsphere.sphere import FIXED, RecordStream

# -- terasort -------------------------------------------------------------------


def test_gen_records_shape():
    assert gen_records(0, 1) == b""
    data = gen_records(50, 3)
    assert len(data) == 100 * 50
    assert data == gen_records(50, 3)
    assert data != gen_records(50, 4)
    assert all(r.endswith(b"\r\n") for r in split_records(data))


@given(st.binary(min_size=2, max_size=2), st.integers(1, 64))
def test_key_bucket_in_range(key, n):
    assert 0 <= key_bucket(key, n) < n


def test_key_bucket_monotone():
    keys = sorted(bytes([a, b]) for a in range(0, 256, 7) for b in range(0, 256, 13))
    assert [key_bucket(k, 5) for k in keys] == sorted(key_bucket(k, 5) for k in keys)


def test_verify_detects_swap_and_drop():
    recs = oracles.sort_records(split_records(gen_records(200, 9)))
    good = verify_records(recs)
    assert good.ok and good.record_count == 200
    swapped = recs[:]
    swapped[10], swapped[11] = swapped[11], swapped[10]
    assert not verify_records(swapped).ok
    dropped = verify_records(recs[:-1])
    assert dropped.ok and dropped.keyspace_checksum != good.keyspace_checksum


@pytest.fixture(scope="module")
def tera():
    c = SimCluster(4, seed=11, chunk_size=4000).start()
    register_terasort(c.engine)
    return c, c.client("alice")


def test_terasort_small(tera):
    _, cl = tera
    ds = teragen(cl, 600, seed=2, name="t/in", files=3)
    before = verify_sorted(cl, ds.dataset)
    outs = terasort(cl, ds, 4, output_name="t/out")
    assert len(outs) == 4
    after = verify_sorted(cl, outs)
    assert after.ok and after.record_count == 600
    assert after.keyspace_checksum == before.keyspace_checksum
    got = [r for name in outs for r in split_records(cl.download(name))]
    want = oracles.sort_records(split_records(b"".join(cl.download(n) for n in ds.dataset)))
    assert [r[:10] for r in got] == [r[:10] for r in want]


def test_terasort_already_sorted(tera):
    _, cl = tera
    recs = oracles.sort_records(split_records(gen_records(300, 5)))
    cl.upload("t/sorted", b"".join(recs), chunk_size=4000)
    outs = terasort(cl, RecordStream(["t/sorted"], TERA), 3, output_name="t/out2")
    assert [r for n in outs for r in split_records(cl.download(n))] == recs


def test_terasort_equal_keys(tera):
    _, cl = tera
    recs = [b"K" * 10 + r[10:] for r in split_records(gen_records(120, 6))]
    cl.upload("t/same", b"".join(recs), chunk_size=4000)
    outs = terasort(cl, RecordStream(["t/same"], TERA), 4, output_name="t/out3")
    got = [r for n in outs for r in split_records(cl.download(n))]
    assert sorted(got) == sorted(recs)
    assert verify_records(got).ok


def test_terasort_empty(tera):
    _, cl = tera
    ds = teragen(cl, 0, seed=1, name="t/empty")
    outs = terasort(cl, ds, 2, output_name="t/out4")
    assert verify_sorted(cl, outs).record_count == 0


# -- k-means ----------------------------------------------------------------------


def test_k1_is_the_mean():
    pts = gen_points(500, d=3, clusters=2, seed=1)
    model = kmeans_reference(pts, 1, 2, seed=0)
    assert np.allclose(model.centers[0], pts.mean(axis=0), atol=1e-12)


def test_two_separated_blobs():
    rng = np.random.default_rng(0)
    a = rng.normal(-50, 1, (200, 2))
    b = rng.normal(50, 1, (200, 2))
    model = kmeans_reference(np.vstack([a, b]), 2, 5, seed=3)
    got = sorted(model.centers.tolist())
    assert np.allclose(got[0], a.mean(axis=0)) and np.allclose(got[1], b.mean(axis=0))


def test_zero_iterations_keep_init():
    pts = gen_points(100, d=2, seed=2)
    model = kmeans_reference(pts, 4, 0, seed=5)
    assert len(model.history) == 1
    assert np.array_equal(model.centers, model.history[0])


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 120), st.integers(1, 4), st.integers(1, 5), st.integers(0, 4), st.integers(0, 99))
def test_reference_matches_plain_lloyd(n, d, k, iters, seed):
    pts = np.round(gen_points(n, d, clusters=3, seed=seed), 3)
    k = min(k, len({p.tobytes() for p in pts}))
    model = kmeans_reference(pts, k, iters, seed)
    hist, sse = oracles.lloyd(pts.tolist(), model.history[0].tolist(), iters)
    for mine, ref in zip(model.history, hist):
        assert np.allclose(mine, ref, rtol=0, atol=1e-9)
    assert all(math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-9)
               for a, b in zip(model.inertia_history, sse))


def test_inertia_never_increases():
    model = kmeans_reference(gen_points(2000, d=4, clusters=6, seed=8), 6, 10, seed=1)
    h = model.inertia_history
    assert all(b <= a * (1 + 1e-12) for a, b in zip(h, h[1:]))


def test_k_too_large():
    with pytest.raises(KTooLarge):
        kmeans_reference(np.zeros((5, 2)), 6, 1, seed=0)
    with pytest.raises(KTooLarge):
        kmeans_reference(np.zeros((5, 2)), 2, 1, seed=0)  # one distinct point


def test_bad_dimension():
    with pytest.raises(BadDimension):
        kmeans_reference(np.zeros(5), 1, 1, seed=0)
    c = SimCluster(2, seed=1, chunk_size=4096).start()
    km.register(c.engine)
    cl = c.client("alice")
    cl.upload("bad/pts", bytes(8 * 3 * 4 + 8))
    with pytest.raises(BadDimension):
        kmeans_run(cl, RecordStream(["bad/pts"], FIXED(24)), 2, 1, seed=0)
    with pytest.raises(BadDimension):
        kmeans_run(cl, RecordStream(["bad/pts"], FIXED(20)), 2, 1, seed=0)


def test_distributed_matches_reference():
    c = SimCluster(3, seed=4, chunk_size=4096).start()
    km.register(c.engine)
    cl = c.client("alice")
    pts = gen_points(3000, d=5, clusters=4, seed=6)
    ds = upload_points(cl, pts, files=3)
    got = kmeans_run(cl, ds, 4, 4, seed=2)
    want = kmeans_reference(pts, 4, 4, seed=2)
    assert np.abs(got.centers - want.centers).max() <= 1e-9
    assert math.isclose(got.inertia, want.inertia, rel_tol=1e-9)
    stored = oracles.unpack_points(b"".join(cl.download(n) for n in ds.dataset), 5)
    assert np.array_equal(np.array(stored), pts)


# -- llpr -------------------------------------------------------------------------------


@pytest.mark.parametrize("wan,local,want", [
    (550e6, 662.65e6, 0.83),
    (360e6, 461.5e6, 0.78),
])
def test_llpr_reference_ratios(wan, local, want):
    assert llpr(wan, local) == pytest.approx(want, abs=0.005)


def test_llpr_edges():
    assert llpr(5e6, 5e6) == 1.0
    with pytest.raises(ValueError):
        llpr(1.0, 0.0)
    with pytest.raises(ValueError):
        llpr(1.0, -3.0)
    with pytest.raises(ValueError):
        llpr(-1.0, 3.0)


def test_harness_identical_links_is_one():
    prof = local_profile_for(LinkProfile(latency_ms=20, bandwidth_bps=50e6))
    rep = llpr_harness(SimNetwork(3), prof, 1 << 20)
    assert rep.llpr == pytest.approx(1.0, abs=0.01)


def test_harness_long_link_slower():
    rep = llpr_harness(SimNetwork(3), LinkProfile(latency_ms=50, bandwidth_bps=50e6), 4 << 20)
    assert 0 < rep.llpr < 1


# -- reports -----------------------------------------------------------------------------


def test_csv_layout():
    rows = [{"nodes": 4, "records": 100000, "seconds": 1.5, "ok": True}]
    assert csv_text(rows, TERASORT_COLUMNS) == "nodes,records,seconds,ok\n4,100000,1.500000,true\n"
    assert csv_text([], LLPR_COLUMNS) == "rtt_ms,loss,throughput_wan,throughput_local,llpr\n"
    row = {"rtt_ms": 50.0, "loss": 0.0, "throughput_wan": 9.5e7, "throughput_local": 1e8, "llpr": 0.95}
    assert csv_text([row], LLPR_COLUMNS).splitlines()[1] == "50,0,95000000,100000000,0.950000"
