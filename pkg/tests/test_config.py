import pytest

from sectorsphere.config import ClusterConfig, ConfigError, llpr_rtts, load_config, parse_config
from sectorsphere.net import Address

SAMPLE = """
# a small lab
seed = 7
nodes = 4
chunk_size = 65536
latency_ms = 0.5
bandwidth_bps = 1e9
workloads = terasort, llpr
terasort.records = 2000
llpr.rtts = 1, 20
servers = a:1, b:2

[link node0 node3]
latency_ms = 40
loss_rate = 0.01
"""


def test_parse_sample():
    cfg = parse_config(SAMPLE)
    assert (cfg.seed, cfg.nodes, cfg.chunk_size) == (7, 4, 65536)
    assert cfg.default_profile.latency_ms == 0.5 and cfg.default_profile.bandwidth_bps == 1e9
    assert cfg.workloads == ["terasort", "llpr"]
    assert cfg.params["terasort"]["records"] == 2000
    assert llpr_rtts(cfg) == [1.0, 20.0]
    assert cfg.servers == [Address("a", 1), Address("b", 2)]
    (link,) = cfg.links
    assert (link.a, link.b) == ("node0", "node3")
    # unspecified link keys inherit the default profile
    assert (link.profile.latency_ms, link.profile.loss_rate, link.profile.bandwidth_bps) == (40, 0.01, 1e9)


def test_link_applied_to_network():
    net = parse_config(SAMPLE).sim_network()
    assert net.link("node3", "node0").profile.latency_ms == 40
    assert net.link("node1", "node2").profile.latency_ms == 0.5


def test_defaults():
    cfg = parse_config("")
    assert cfg == ClusterConfig()
    assert load_config(None).nodes == cfg.nodes


@pytest.mark.parametrize("text", [
    "nodes = 0",
    "nodes = 2.5",
    "seed = x",
    "bogus = 1",
    "terasort.nope = 3",
    "workloads = sort",
    "seed = 1\nseed = 2",
    "[link a]",
    "[link a b\nlatency_ms = 1",
    "[link a b]\nnodes = 3",
    "just words",
    "loss_rate = 2",
    "min_rate = 500\ninitial_rate = 100",
])
def test_rejects(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_from_env(tmp_path, monkeypatch):
    p = tmp_path / "c.conf"
    p.write_text("nodes = 5\n")
    monkeypatch.setenv("SS_CONFIG", str(p))
    assert load_config().nodes == 5
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.conf"))
