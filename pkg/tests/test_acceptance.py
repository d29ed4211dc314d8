"""Acceptance suite: one test per criterion, reported as [PASS]/[FAIL] lines
in the terminal summary. Run with ``pytest tests/test_acceptance.py -v``."""

import json
import time
from fractions import Fraction

import numpy as np
import pandas as pd
import pytest

from gnnnad import cli
from gnnnad.evaluation import ConfusionCounts, Metrics
from gnnnad.forest import ForestConfig, fit_forest
from gnnnad.fusion import SampleSet
from gnnnad.graph_model import encode_attack_graph, generate_fixture_graph, write_attack_graph
from gnnnad.gsage import GsageConfig, GsageModel, forward
from gnnnad.numeric import finite_difference_check, make_rng, softmax_cross_entropy
from gnnnad.synth import DEFAULT_NETWORK, FEATURE_NAMES
from oracles import bag_of_words, cart_predict, cart_tree

FAST = ["--epochs", "2", "--hidden", "16", "--layers", "2", "--trees", "5"]


@pytest.mark.criterion("bag-of-words encoding equals oracle on 5/10/50-node graphs in < 1 s")
def test_encoding_fidelity(fixture_graphs):
    graphs = [fixture_graphs[n] for n in (5, 10, 50)]
    assert [g.n for g in graphs] == [5, 10, 50]
    start = time.perf_counter()
    encoded = [encode_attack_graph(g) for g in graphs]
    elapsed = time.perf_counter() - start
    for g, sag in zip(graphs, encoded):
        vocab, rows = bag_of_words([v.statement for v in g.nodes])
        assert list(sag.vocabulary.tokens) == vocab
        assert sag.features.tobytes() == np.array(rows, dtype=np.float64).tobytes()
    assert elapsed < 1.0


def _five_node_samples(two_host_graph, count=8, K=4, seed=0):
    sag = encode_attack_graph(two_host_graph)
    rng = np.random.default_rng(seed)
    masks = rng.random((count, sag.n)) < 0.5
    return sag, SampleSet(sag.features, masks, rng.random((count, K)), np.arange(count) % 2, np.arange(count))


@pytest.mark.criterion("GSAGE gradients match central differences (200 coords) with rel. error < 1e-4 in < 30 s")
def test_gradient_fidelity(two_host_graph):
    start = time.perf_counter()
    sag, samples = _five_node_samples(two_host_graph)
    cfg = GsageConfig(layer_count=3, hidden_units=8, dropout_p=0.0, seed=3)
    model = GsageModel.for_samples(sag.graph.adjacency(), samples, 2, cfg)
    x = samples.node_feature_batch(range(len(samples)))
    y = samples.labels
    model.loss_and_grad(x, y)

    def loss():
        return softmax_cross_entropy(model.forward_batch(x)[1], y)[0]

    err = finite_difference_check(loss, model.parameters, epsilon=1e-5, coordinates=200, rng=make_rng(0))
    assert err < 1e-4
    assert time.perf_counter() - start < 30.0


@pytest.mark.criterion("graph embedding changes by < 1e-6 relative error under 100 node permutations")
def test_permutation_invariance():
    sag = encode_attack_graph(generate_fixture_graph(DEFAULT_NETWORK))
    adj = sag.graph.adjacency()
    rng = np.random.default_rng(0)
    x = np.hstack([sag.features, rng.random((sag.n, 8)) * (rng.random((sag.n, 1)) < 0.4)])
    base, _ = forward(GsageModel(adj, x.shape[1], 2, GsageConfig()), x)
    assert np.linalg.norm(base) > 0
    for _ in range(100):
        perm = rng.permutation(sag.n)
        model = GsageModel(adj[np.ix_(perm, perm)], x.shape[1], 2, GsageConfig())
        emb, _ = forward(model, x[perm])
        assert np.linalg.norm(emb - base) / np.linalg.norm(base) < 1e-6


CONFUSIONS = [
    # (tp, fp, tn, fn) -> accuracy, recall, precision, f1 worked by hand
    ((3, 1, 5, 1), ("4/5", "3/4", "3/4", "3/4")),
    ((10, 0, 10, 0), ("1", "1", "1", "1")),
    ((0, 5, 5, 0), ("1/2", None, "0", None)),
    ((0, 0, 7, 3), ("7/10", "0", None, None)),
    ((1, 1, 1, 1), ("1/2", "1/2", "1/2", "1/2")),
    ((5, 2, 0, 1), ("5/8", "5/6", "5/7", "10/13")),
    ((2, 3, 4, 6), ("2/5", "1/4", "2/5", "4/13")),
    ((997, 3, 9000, 0), ("9997/10000", "1", "997/1000", "1994/1997")),
    ((0, 0, 4, 0), ("1", None, None, None)),
    ((8, 4, 2, 2), ("5/8", "4/5", "2/3", "8/11")),
]


@pytest.mark.criterion("metric formulas exact on 10 hand-built confusion matrices")
def test_metric_exactness():
    for counts, expected in CONFUSIONS:
        m = Metrics.from_counts(ConfusionCounts(*counts))
        got = (m.accuracy, m.recall, m.precision, m.f1)
        want = tuple(None if e is None else Fraction(e) for e in expected)
        assert got == want, counts
        assert all(v is None or isinstance(v, Fraction) for v in got)


@pytest.mark.criterion("single-tree forest equals exhaustive CART oracle on 5 random 10x3 datasets")
def test_forest_oracle():
    cfg = ForestConfig(tree_count=1, bootstrap=False, features_per_split=3)
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        x = rng.integers(0, 8, size=(10, 3)).astype(float)
        y = rng.integers(0, 2, size=10)
        y[:2] = [0, 1]
        forest = fit_forest(x, y, cfg)
        pts = [tuple(r) for r in x.tolist()]
        tree = cart_tree(pts, y.tolist(), 2)
        assert forest.trees[0].structure() == tree
        probe = rng.integers(-1, 9, size=(50, 3)).astype(float)
        assert forest.predict(probe).tolist() == [cart_predict(tree, p) for p in probe.tolist()]


@pytest.mark.slow
@pytest.mark.criterion("synthetic end-to-end run with default hyperparameters: mean accuracy >= 0.95 over 3 repeats "
                       "in < 10 min")
def test_end_to_end_synthetic(tmp_path, capsys):
    start = time.perf_counter()
    assert cli.main(["synth", "--out", str(tmp_path / "data")]) == 0
    rc = cli.main(["run", "--config", str(tmp_path / "data" / "config.json"), "--out", str(tmp_path / "out"),
                   "--repeats", "3"])
    elapsed = time.perf_counter() - start
    assert rc == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    gs = report["config"]["gsage"]
    assert (gs["layer_count"], gs["hidden_units"], gs["dropout_p"], gs["epochs"], gs["batch_size"],
            gs["learning_rate"]) == (3, 256, 0.2, 100, 32, 0.001)
    print(f"\nend-to-end mean {report['mean']} in {elapsed:.1f}s")
    assert len(report["runs"]) == 3
    assert report["mean"]["accuracy"] >= 0.95
    assert elapsed < 600


@pytest.mark.criterion("two runs with identical config and seed give identical reports and checkpoints")
def test_determinism(tmp_path):
    assert cli.main(["synth", "--out", str(tmp_path / "data"), "--seed", "3"]) == 0
    docs, ckpts = [], []
    for name in ("one", "two"):
        out = tmp_path / name
        assert cli.main(["run", "--config", str(tmp_path / "data" / "config.json"), "--out", str(out),
                         "--repeats", "2", "--dropout", "0.2", *FAST]) == 0
        doc = json.loads((out / "report.json").read_text())
        doc.pop("timing")
        docs.append(doc)
        ckpts.append((out / "model.ckpt").read_bytes())
    assert docs[0] == docs[1]
    assert ckpts[0] == ckpts[1]
    assert (tmp_path / "one" / "forest.txt").read_text() == (tmp_path / "two" / "forest.txt").read_text()


CIC_CLASSES = {"BENIGN": 11000, "DDoS": 1400, "PortScan": 1200, "Bot": 700, "Infiltration": 36, "Heartbleed": 11}


def _cic_like_csv(path, seed=0):
    """Flow CSV with CIC-style padded headers, dirty rows and the two excluded classes."""
    rng = np.random.default_rng(seed)
    pairs = DEFAULT_NETWORK.reachability
    frames = []
    for k, (label, count) in enumerate(CIC_CLASSES.items()):
        pick = rng.integers(0, len(pairs), size=count)
        feats = rng.normal(100 + 10 * k, 5, size=(count, len(FEATURE_NAMES)))
        frames.append(pd.DataFrame({
            " Source IP": [pairs[i][0] for i in pick], " Source Port": rng.integers(1024, 65536, count),
            " Destination IP": [pairs[i][1] for i in pick], " Destination Port": [pairs[i][3] for i in pick],
            " Protocol": 6, " Timestamp": "3/7/2017 9:00",
            **{" " + name: feats[:, j] for j, name in enumerate(FEATURE_NAMES)}, " Label": label,
        }))
    frame = pd.concat(frames, ignore_index=True)
    frame = frame.astype({" " + FEATURE_NAMES[3]: object})
    dirty = rng.choice(np.flatnonzero(frame[" Label"] == "DDoS"), size=20, replace=False)
    frame.loc[dirty[:10], " " + FEATURE_NAMES[3]] = "Infinity"
    frame.loc[dirty[10:], " " + FEATURE_NAMES[3]] = "NaN"
    frame.to_csv(path, index=False)


@pytest.mark.slow
@pytest.mark.criterion("CIC-style preparation yields exact per-class counts and the full 6-rate sweep runs")
def test_cic_protocol(tmp_path, capsys):
    graph = generate_fixture_graph(DEFAULT_NETWORK)
    write_attack_graph(graph, tmp_path / "VERTICES.CSV", tmp_path / "ARCS.CSV")
    _cic_like_csv(tmp_path / "flows.csv")
    rc = cli.main(["sweep", "--vertices", str(tmp_path / "VERTICES.CSV"), "--arcs", str(tmp_path / "ARCS.CSV"),
                   "--flows", str(tmp_path / "flows.csv"), "--out", str(tmp_path / "out"), "--repeats", "1",
                   "--epochs", "1", "--hidden", "16", "--layers", "2", "--trees", "5"])
    assert rc == 0
    doc = json.loads((tmp_path / "out" / "sweep.json").read_text())
    assert doc["dataset"]["class_counts"] == {"BENIGN": 9000, "DDoS": 1000, "PortScan": 1000, "Bot": 700}
    assert doc["dataset"]["dropped"] == 20
    assert [row["rate"] for row in doc["rows"]] == [0.1, 0.2, 0.4, 0.6, 0.8, 1.0]
    sweep = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert len(sweep) == 7
    # 10% of 9000/1000/1000/700 -> 900+100+100+70 flows, 20% held out per class
    assert doc["rows"][0]["test_size"] == 180 + 20 + 20 + 14
    print("\n" + "\n".join(sweep))


@pytest.mark.criterion("time command: median embed+predict over pre-built samples, construction reported apart")
def test_timing_methodology(tmp_path, monkeypatch):
    assert cli.main(["synth", "--out", str(tmp_path / "data"), "--per-class", "200"]) == 0
    inside = {"flag": False, "calls": 0}
    real_measure, real_build = cli.measure_test_time, cli.build_dataset

    def measure(*args, **kwargs):
        inside["flag"] = True
        try:
            return real_measure(*args, **kwargs)
        finally:
            inside["flag"] = False

    def build(*args, **kwargs):
        assert not inside["flag"], "sample construction inside the timed region"
        inside["calls"] += 1
        return real_build(*args, **kwargs)

    monkeypatch.setattr(cli, "measure_test_time", measure)
    monkeypatch.setattr(cli, "build_dataset", build)
    monkeypatch.setattr("gnnnad.evaluation.build_dataset", build)
    out = tmp_path / "t"
    assert cli.main(["time", "--config", str(tmp_path / "data" / "config.json"), "--out", str(out), *FAST]) == 0
    doc = json.loads((out / "timing.json").read_text())
    assert inside["calls"] >= 1
    assert len(doc["test_seconds_runs"]) == 5
    assert doc["test_seconds_median"] == sorted(doc["test_seconds_runs"])[2]
    breakdown = doc["construction_breakdown"]
    assert doc["construction_seconds"] == pytest.approx(sum(breakdown.values()))
    assert doc["test_samples"] == 80
