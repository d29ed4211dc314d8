import random

import numpy as np
import pytest

from gnnnad.fusion import SampleSet
from gnnnad.graph_model import AttackGraphNode, ToyNetwork, generate_fixture_graph, make_graph

PREDICATES = (
    "attackerLocated({a})", "hacl({a},{b},tcp,{p})", "vulExists({a},'CVE-20{y}-{c}')",
    "execCode({a},root)", "netAccess({a},tcp,{p})", "RULE {r} (remote exploit of a server program)",
    "networkServiceInfo({a},httpd,tcp,{p},apache)", "inCompetent(user_{r})",
)
HOSTS = ("webServer", "'172.30.211.20'", "'172.30.211.24'", "dbServer", "fileServer", "'10.0.0.7'")


def random_mulval_graph(n: int, seed: int):
    """A MulVAL-flavoured random DAG with exactly ``n`` nodes (edges only go up in id)."""
    rnd = random.Random(seed)
    nodes = []
    for i in range(1, n + 1):
        stmt = rnd.choice(PREDICATES).format(
            a=rnd.choice(HOSTS), b=rnd.choice(HOSTS), p=rnd.choice((22, 80, 443, 3306)),
            y=rnd.randint(10, 23), c=rnd.randint(1000, 9999), r=i,
        )
        nodes.append(AttackGraphNode(i, stmt, rnd.choice(("AND", "OR", "LEAF")), float(rnd.randint(0, 3))))
    edges = sorted({(a, b) for a in range(1, n + 1) for b in range(a + 1, n + 1) if rnd.random() < 2.5 / n})
    return make_graph(nodes, edges)


TWO_HOST = ToyNetwork(
    hosts=["internet", "webServer"],
    reachability=[("internet", "webServer", "tcp", 80)],
    vulnerabilities={"webServer": ["CVE-2021-41773"]},
    attacker="internet",
)


@pytest.fixture
def two_host_graph():
    return generate_fixture_graph(TWO_HOST)


@pytest.fixture(scope="session")
def fixture_graphs():
    """Graphs of 5, 10 and 50 nodes."""
    return {5: generate_fixture_graph(TWO_HOST), 10: random_mulval_graph(10, 1), 50: random_mulval_graph(50, 2)}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary ------------------------------------------------------------

_CRITERIA: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _CRITERIA.append((status, marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for status, name in _CRITERIA:
        terminalreporter.write_line(f"[{status}] {name}")


def separable_samples(n_nodes=5, count=200, K=3, seed=0, gap=1.0):
    """Two-class SampleSet on a path graph; class 1 shifts every dynamic feature by ``gap``."""
    rng = np.random.default_rng(seed)
    static = rng.integers(0, 2, size=(n_nodes, 4)).astype(float)
    labels = np.arange(count) % 2
    dynamic = rng.random((count, K)) * 0.3 + gap * labels[:, None]
    masks = np.zeros((count, n_nodes), bool)
    masks[:, : max(1, n_nodes // 2)] = True
    adj = np.zeros((n_nodes, n_nodes))
    for i in range(n_nodes - 1):
        adj[i, i + 1] = adj[i + 1, i] = 1
    return adj, SampleSet(static, masks, dynamic, labels, np.arange(count))


def small_pipeline(per_class=60, seed=0):
    """Encoded fixture graph plus a parsed synthetic flow set."""
    from gnnnad.graph_model import encode_attack_graph
    from gnnnad.synth import DEFAULT_NETWORK, synth_flows
    from gnnnad.traffic import parse_flow_csv

    graph = generate_fixture_graph(DEFAULT_NETWORK)
    frame = synth_flows(graph, per_class=per_class, seed=seed)
    return encode_attack_graph(graph), parse_flow_csv(frame.to_csv(index=False))


TINY_GSAGE = dict(layer_count=2, hidden_units=16, dropout_p=0.1, epochs=5, batch_size=32, learning_rate=0.01)
