"""Desk-scale synthetic fixture: a toy attack graph plus a labelled flow CSV
whose IPs all occur in the graph."""

from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from .graph_model import AttackGraph, ToyNetwork, generate_fixture_graph, write_attack_graph

DEFAULT_NETWORK = ToyNetwork(
    hosts=["172.30.211.1", "172.30.211.20", "172.30.211.24", "172.30.211.30", "172.30.211.41"],
    reachability=[
        ("172.30.211.1", "172.30.211.20", "tcp", 80),
        ("172.30.211.1", "172.30.211.24", "tcp", 443),
        ("172.30.211.20", "172.30.211.30", "tcp", 22),
        ("172.30.211.24", "172.30.211.30", "udp", 53),
        ("172.30.211.30", "172.30.211.41", "tcp", 3306),
    ],
    vulnerabilities={
        "172.30.211.20": ["CVE-2021-41773"],
        "172.30.211.24": ["CVE-2014-0160"],
        "172.30.211.30": ["CVE-2018-15473"],
        "172.30.211.41": ["CVE-2012-2122"],
    },
    attacker="172.30.211.1",
)

FEATURE_NAMES = (
    "Flow Duration", "Total Fwd Packets", "Total Backward Packets", "Flow Bytes/s",
    "Flow Packets/s", "Fwd Packet Length Mean", "Bwd Packet Length Mean", "Flow IAT Mean",
)
# features 0, 1, 3, 5 separate the classes; the rest share a distribution
DISCRIMINATIVE = (0, 1, 3, 5)
SEPARATION_SD = 6.0
CLASS_LABELS = ("BENIGN", "DDoS")


def synth_flows(graph: AttackGraph, network: ToyNetwork = DEFAULT_NETWORK, per_class: int = 1000,
                seed: int = 0) -> pd.DataFrame:
    """Flows over the graph's reachability pairs, class means ``SEPARATION_SD`` SDs apart."""
    rng = np.random.default_rng(seed)
    base = np.array([5000.0, 20.0, 18.0, 1.5e4, 40.0, 300.0, 250.0, 900.0])
    sd = base * 0.05
    rows = []
    start = datetime(2017, 7, 3, 9, 0, tzinfo=timezone.utc)
    for cls, label in enumerate(CLASS_LABELS):
        mean = base.copy()
        mean[list(DISCRIMINATIVE)] += cls * SEPARATION_SD * sd[list(DISCRIMINATIVE)]
        feats = rng.normal(mean, sd, size=(per_class, len(base)))
        pairs = rng.integers(0, len(network.reachability), size=per_class)
        offsets = np.sort(rng.uniform(0, 3600, size=per_class))
        for i in range(per_class):
            src, dst, proto, port = network.reachability[pairs[i]]
            rows.append({
                "Flow ID": f"{src}-{dst}-{port}-{proto}",
                "Source IP": src,
                "Source Port": int(rng.integers(1024, 65536)),
                "Destination IP": dst,
                "Destination Port": port,
                "Protocol": 6 if proto == "tcp" else 17,
                "Timestamp": (start + timedelta(seconds=float(offsets[i]))).strftime("%d/%m/%Y %H:%M:%S"),
                **{name: round(float(v), 6) for name, v in zip(FEATURE_NAMES, feats[i])},
                "Label": label,
            })
    frame = pd.DataFrame(rows)
    return frame.iloc[rng.permutation(len(frame))].reset_index(drop=True)


def write_fixture(out_dir, seed: int = 0, per_class: int = 1000, network: ToyNetwork = DEFAULT_NETWORK) -> dict:
    """Write ``VERTICES.CSV``, ``ARCS.CSV``, ``flows.csv`` and a matching ``config.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    graph = generate_fixture_graph(network)
    write_attack_graph(graph, out / "VERTICES.CSV", out / "ARCS.CSV")
    synth_flows(graph, network, per_class, seed).to_csv(out / "flows.csv", index=False, lineterminator="\n")
    config = {
        "vertices": "VERTICES.CSV",
        "arcs": "ARCS.CSV",
        "flows": "flows.csv",
        "out": "results",
        "seed": seed,
    }
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n")
    return {"graph": graph, "paths": {k: out / v for k, v in config.items() if isinstance(v, str)}}
