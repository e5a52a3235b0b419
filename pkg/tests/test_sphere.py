import random
from collections import Counter

import pytest

import oracles
from sectorsphere.cluster import SimCluster
from sectorsphere.errors import (
    AdmissionFailed,
    DuplicateName,
    JobAborted,
    JobNotDone,
    NotFound,
    UnknownInput,
    UnknownUdf,
)
from sectorsphere.net import Address
from sectorsphere.sphere import (
    FIXED,
    LENGTH_PREFIXED,
    Engine,
    JobSpec,
    RecordStream,
    SchedulerState,
    Segment,
    Stage,
    assign_segment,
    handle_worker_failure,
    job_collect,
    plan_segments,
    read_output,
    register_udf,
    run_job,
    shuffle_route,
    submit_job,
)
from sectorsphere.storage import FileMetadata

W = [Address(f"w{i}", 1) for i in range(4)]


def meta(size, csize, name="f"):
    n = -(-size // csize)
    return FileMetadata(name, size, csize, "u", 1, [[W[i % 4]] for i in range(n)], [0] * n)


# -- planning -----------------------------------------------------------------

def test_one_segment_per_chunk():
    segs = plan_segments([meta(3000, 1000)], FIXED(10))
    assert len(segs) == 3
    assert [s.record_range for s in segs] == [(0, 100), (100, 200), (200, 300)]
    assert [s.preferred_nodes for s in segs] == [[W[0]], [W[1]], [W[2]]]


def test_single_chunk_range():
    (seg,) = plan_segments([meta(1000, 4096)], FIXED(10))
    assert seg.record_range == (0, 100)


def test_misaligned_chunks_refused():
    with pytest.raises(AdmissionFailed):
        plan_segments([meta(1000, 150)], FIXED(100))
    with pytest.raises(AdmissionFailed):
        plan_segments([meta(1050, 4096)], FIXED(100))


def test_ranges_partition_stream():
    metas = [meta(2400, 800, "a"), meta(0, 800, "b"), meta(1200, 400, "c")]
    segs = plan_segments(metas, FIXED(8), records_per_segment=30)
    covered = [i for s in segs for i in range(*s.record_range)]
    assert covered == list(range((2400 + 1200) // 8))


def test_length_prefixed_whole_file():
    (seg,) = plan_segments([meta(5000, 1000)], LENGTH_PREFIXED)
    assert seg.chunk_index == -1 and seg.length == 5000


# -- scheduling -------------------------------------------------------------------

def segs(*prefs):
    return [Segment(i, "f", i, (i, i + 1), list(p)) for i, p in enumerate(prefs)]


def test_local_worker_preferred():
    sched = SchedulerState(segs([W[2]], [W[1]]), [W[0], W[1]])
    seg, worker = assign_segment(sched)
    assert (seg.segment_id, worker) == (1, W[1])
    assert sched.local_assignments == 1


def test_remote_rather_than_idle():
    sched = SchedulerState(segs([W[3]]), [W[0]])
    seg, worker = assign_segment(sched)
    assert (seg.segment_id, worker) == (0, W[0])
    assert sched.remote_assignments == 1


def test_no_idle_worker():
    sched = SchedulerState(segs([W[0]], [W[0]]), [W[0]])
    assert assign_segment(sched) is not None
    assert assign_segment(sched) is None


def test_ties_lowest_segment_then_address():
    sched = SchedulerState(segs([W[1], W[0]], [W[0], W[1]]), [W[1], W[0]])
    picks = [assign_segment(sched), assign_segment(sched)]
    assert [(s.segment_id, w) for s, w in picks] == [(0, W[0]), (1, W[1])]


def test_shuffle_route():
    assert shuffle_route(0, 4, W) == W[0]
    owners = Counter(shuffle_route(k, 8, W) for k in range(8))
    assert all(v == 2 for v in owners.values())
    assert [shuffle_route(k, 8, W) for k in range(8)] == [shuffle_route(k, 8, W) for k in range(8)]
    with pytest.raises(ValueError):
        shuffle_route(8, 8, W)


def test_duplicate_udf_name():
    eng = Engine()
    register_udf(eng, "identity", lambda r: [r])
    with pytest.raises(DuplicateName):
        register_udf(eng, "identity", lambda r: [r])


# -- jobs on a simulated cluster ------------------------------------------------------

def first_byte(r):
    return [(r[0] % 4, r)]


def mod3(r):
    return [(r[0] % 3, r)]


def explode_on_7(r):
    if r[0] == 7:
        raise ValueError("bad record")
    return [(r[0] % 2, r)]


@pytest.fixture(scope="module")
def sim():
    c = SimCluster(4, seed=6, chunk_size=1000).start()
    eng = c.engine
    eng.register_udf("identity", lambda r: [r])
    eng.register_udf("drop_all", lambda r: [])
    eng.register_udf("bucket_first", first_byte)
    eng.register_udf("mod3", mod3)
    eng.register_udf("explode", explode_on_7)
    eng.register_udf("sort_bucket", lambda recs: [(r[0] % 4, r) for r in sorted(recs)], batch=True)
    cl = c.client("alice")
    rng = random.Random(0)
    recs = [rng.randbytes(10) for _ in range(1000)]
    cl.upload("in/a", FIXED(10).join(recs))
    return c, cl, recs


def multiset(cl, names, fmt=FIXED(10)):
    return Counter(read_output(cl, names, fmt))


def test_identity_job(sim):
    _, cl, recs = sim
    spec = JobSpec(RecordStream(["in/a"], FIXED(10)), "identity", output_name="j/id",
                   output_format=FIXED(10))
    outs = run_job(cl, spec)
    assert multiset(cl, outs) == Counter(recs)


def test_identity_keeps_order_in_segment(sim):
    _, cl, recs = sim
    spec = JobSpec(RecordStream(["in/a"], FIXED(10)), "identity", output_name="j/order",
                   output_format=FIXED(10))
    outs = run_job(cl, spec)
    assert [n.rsplit("/", 1)[1] for n in outs] == [f"part_{i}" for i in range(10)]
    assert read_output(cl, outs, FIXED(10)) == recs


def test_drop_all(sim):
    _, cl, _ = sim
    spec = JobSpec(RecordStream(["in/a"], FIXED(10)), "drop_all", n_buckets=2, output_name="j/none")
    outs = run_job(cl, spec)
    assert multiset(cl, outs, LENGTH_PREFIXED) == Counter()


def test_buckets_become_files(sim):
    _, cl, recs = sim
    spec = JobSpec(RecordStream(["in/a"], FIXED(10)), "bucket_first", n_buckets=4,
                   output_name="j/b", output_format=FIXED(10))
    outs = run_job(cl, spec)
    assert outs == [f"j/b/bucket_{k}" for k in range(4)]
    want = Counter(r[0] % 4 for r in recs)
    for k, name in enumerate(outs):
        got = read_output(cl, [name], FIXED(10))
        assert all(r[0] % 4 == k for r in got)
        assert len(got) == want[k]


def test_matches_serial_loop(sim):
    _, cl, recs = sim
    spec = JobSpec(RecordStream(["in/a"], FIXED(10)), "mod3", n_buckets=3,
                   output_name="j/loop", output_format=FIXED(10))
    assert multiset(cl, run_job(cl, spec)) == oracles.serial_loop(recs, mod3)


def test_two_stage_job(sim):
    _, cl, recs = sim
    spec = JobSpec(RecordStream(["in/a"], FIXED(10)), output_name="j/two", stage_list=[
        Stage("bucket_first", 4, output_format=LENGTH_PREFIXED),
        Stage("sort_bucket", 4, output_format=FIXED(10)),
    ])
    outs = run_job(cl, spec)
    for k, name in enumerate(outs):
        got = read_output(cl, [name], FIXED(10))
        assert got == sorted(r for r in recs if r[0] % 4 == k)
    # intermediate outputs are cleaned up
    assert not [m for m in cl.list_files("j/two/_stage")]


def test_admission_errors(sim):
    _, cl, _ = sim
    with pytest.raises(UnknownUdf):
        run_job(cl, JobSpec(RecordStream(["in/a"], FIXED(10)), "nope", output_name="j/x"))
    with pytest.raises(UnknownInput):
        submit_job(cl, JobSpec(RecordStream(["in/missing"], FIXED(10)), "identity"))
    with pytest.raises(AdmissionFailed):
        run_job(cl, JobSpec(RecordStream(["in/a"], FIXED(7)), "identity", output_name="j/y"))
    with pytest.raises(AdmissionFailed):
        submit_job(cl, JobSpec(RecordStream(["in/a"], FIXED(10)), "identity", n_buckets=10**6))


def test_collect_before_done(sim):
    _, cl, _ = sim
    h = submit_job(cl, JobSpec(RecordStream(["in/a"], FIXED(10)), "identity", output_name="j/early"))
    with pytest.raises(JobNotDone):
        job_collect(h)
    h.wait()
    assert job_collect(h)


def test_failing_udf_aborts_without_output(sim):
    _, cl, _ = sim
    data = bytes([7] * 10) + bytes([1] * 10)
    cl.upload("in/bad", data)
    h = submit_job(cl, JobSpec(RecordStream(["in/bad"], FIXED(10)), "explode", n_buckets=2,
                               output_name="j/bad"))
    with pytest.raises(JobAborted):
        h.wait()
    assert h.stats.failures == 4
    for k in range(2):
        with pytest.raises(NotFound):
            cl.stat(f"j/bad/bucket_{k}")


def test_locality_when_all_holders_idle():
    c = SimCluster(4, seed=2, chunk_size=1000, target_replicas=1).start()
    c.engine.register_udf("identity", lambda r: [r])
    cl = c.client("alice")
    holders = set()
    for i in range(4):
        holders.add(cl.upload(f"loc/{i}", bytes([i]) * 500).replicas[0][0])
        c.run_for(c.nodes[0].config.heartbeat_ms * 2)  # let load reports catch up
    assert len(holders) == 4  # one single-copy chunk on each node
    spec = JobSpec(RecordStream([f"loc/{i}" for i in range(4)], FIXED(10)), "identity",
                   output_name="j/loc")
    h = submit_job(cl, spec).wait()
    assert h.stats.remote_assignments == 0
    assert sum(w.remote_reads for w in c.workers) == 0


def test_worker_kill_mid_job():
    c = SimCluster(4, seed=1, chunk_size=1000).start()
    c.engine.register_udf("bucket_first", first_byte)
    cl = c.client("alice")
    rng = random.Random(5)
    recs = [rng.randbytes(10) for _ in range(1000)]
    cl.upload("in/a", FIXED(10).join(recs))
    h = submit_job(cl, JobSpec(RecordStream(["in/a"], FIXED(10)), "bucket_first", n_buckets=4,
                               output_name="out", output_format=FIXED(10)))
    h.poll(3)
    c.kill(2)
    h.wait()
    assert multiset(cl, job_collect(h)) == Counter(recs)
    assert h.stats.failures + h.stats.reruns + h.stats.reassigned_buckets > 0


def test_kill_idle_worker():
    c = SimCluster(4, seed=1, chunk_size=1000).start()
    c.engine.register_udf("identity", lambda r: [r])
    cl = c.client("alice", servers=[c.nodes[0].addr])
    cl.upload("in/small", bytes(100))
    busy = [c.nodes[0].addr, c.nodes[1].addr]
    h = submit_job(cl, JobSpec(RecordStream(["in/small"], FIXED(10)), "identity", output_name="o",
                                   output_format=FIXED(10)), workers=busy)
    c.kill(3)
    h.wait()
    assert h.stats.reruns == 0 and h.stats.reassigned_buckets == 0
    assert handle_worker_failure(h, c.nodes[3].addr) == []
    assert read_output(cl, job_collect(h), FIXED(10)) == [bytes(10)] * 10


def test_worker_order_does_not_change_output(sim):
    c, cl, recs = sim
    outs = []
    for i, order in enumerate([c.addrs, list(reversed(c.addrs))]):
        spec = JobSpec(RecordStream(["in/a"], FIXED(10)), "bucket_first", n_buckets=4,
                       output_name=f"j/perm{i}", output_format=FIXED(10))
        outs.append(multiset(cl, run_job(cl, spec, workers=order)))
    assert outs[0] == outs[1] == Counter(recs)
