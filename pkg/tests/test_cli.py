import pytest

from sectorsphere import cli
from sectorsphere.cli import run_cli
from sectorsphere.config import ConfigError
from sectorsphere.errors import AccessDenied, NotFound


@pytest.fixture
def dd(tmp_path):
    return ["--data-dir", str(tmp_path / "state")]


def test_ls_empty(dd):
    res = run_cli(["ls", *dd])
    assert res.code == 0
    assert res.stdout.split() == ["NAME", "SIZE", "CHUNKS", "REPLICAS", "OWNER", "VERSION"]


def test_up_down_roundtrip(tmp_path, dd):
    src = tmp_path / "in.bin"
    src.write_bytes(bytes(range(256)) * 1000)
    res = run_cli(["up", str(src), "docs/a", *dd])
    assert res.code == 0 and res.stdout.startswith("docs/a\t256000\t")
    dst = tmp_path / "out.bin"
    assert run_cli(["down", "docs/a", str(dst), *dd]).code == 0
    assert dst.read_bytes() == src.read_bytes()
    listing = run_cli(["ls", "docs/", *dd]).stdout.splitlines()
    assert len(listing) == 2 and listing[1].split()[0] == "docs/a"
    assert run_cli(["rm", "docs/a", *dd]).code == 0
    assert run_cli(["down", "docs/a", str(dst), *dd]).code == 4


def test_other_user_cannot_delete(tmp_path, dd):
    src = tmp_path / "f"
    src.write_bytes(b"hi")
    assert run_cli(["up", str(src), "mine", "--user", "alice", *dd]).code == 0
    res = run_cli(["rm", "mine", "--user", "bob", *dd])
    assert res.code == 5 and "AccessDenied" in res.stderr


def test_job_run(tmp_path, dd):
    src = tmp_path / "recs"
    src.write_bytes(b"abcd" * 50)
    run_cli(["up", str(src), "in", *dd])
    res = run_cli(["job", "run", "upper", "in", "--record-size", "4", "--output", "o", *dd])
    assert res.code == 0
    out = tmp_path / "o0"
    name = res.stdout.split()[0]
    run_cli(["down", name, str(out), *dd])
    assert out.read_bytes() == b"ABCD" * 50
    assert run_cli(["job", "run", "nosuch", "in", *dd]).code == 12


def test_bench_terasort_ok():
    res = run_cli(["bench", "terasort", "--records", "100000", "--nodes", "4", "--seed", "7"])
    assert res.code == 0, res.stderr
    header, row = res.stdout.strip().splitlines()
    assert header == "nodes,records,seconds,ok"
    nodes, records, _, ok = row.split(",")
    assert (nodes, records, ok) == ("4", "100000", "true")


def test_usage_errors(dd):
    assert run_cli([]).code == 2
    assert run_cli(["frobnicate"]).code == 2
    assert run_cli(["bench", "kmeans", "--k", "-1"]).code == 2
    assert run_cli(["--help"]).code == 0


def test_bad_config_and_missing_local(tmp_path, dd):
    bad = tmp_path / "bad.conf"
    bad.write_text("nodes = none\n")
    assert run_cli(["ls", "--config", str(bad), *dd]).code == 3
    assert run_cli(["ls", "--config", str(tmp_path / "nope.conf"), *dd]).code == 3
    assert run_cli(["up", str(tmp_path / "absent"), "x", *dd]).code == 8


def test_exit_codes_distinct():
    codes = [code for _, code in cli._ERROR_EXITS]
    fixed = [cli.EXIT_OK, cli.EXIT_USAGE, cli.EXIT_VERIFY, cli.EXIT_INTERNAL]
    assert len(set(codes)) == len(codes)
    assert not set(fixed) & set(codes)
    assert cli.exit_code_for(NotFound("x")) == 4
    assert cli.exit_code_for(AccessDenied("x")) == 5
    assert cli.exit_code_for(ConfigError("x")) == cli.EXIT_CONFIG
    assert cli.exit_code_for(RuntimeError("x")) == cli.EXIT_INTERNAL


SIM_CONF = """
seed = 3
nodes = 3
chunk_size = 20000
workloads = terasort, kmeans, llpr
terasort.records = 2000
kmeans.records = 2000
kmeans.k = 3
kmeans.iters = 2
llpr.rtts = 1, 40
llpr.size_bytes = 1000000
"""


def test_sim_reports_deterministic(tmp_path):
    conf = tmp_path / "sim.conf"
    conf.write_text(SIM_CONF)
    runs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        assert run_cli(["sim", str(conf), "--out", str(out)]).code == 0
        runs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    assert sorted(runs[0]) == ["kmeans.csv", "llpr.csv", "terasort.csv"]
    assert runs[0] == runs[1]
    assert runs[0]["terasort.csv"].decode().splitlines()[1].endswith(",true")
    assert len(runs[0]["llpr.csv"].decode().splitlines()) == 3
