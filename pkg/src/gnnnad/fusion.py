"""Fuse per-flow dynamic vectors onto attack-graph nodes.

A flow lands on every node whose statement mentions its source or
destination IP. Each node's input row is its static one-hot row followed by
either the flow's vector (mapped nodes) or zeros.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .graph_model import StaticAttackGraph
from .traffic import FlowDataset, FlowRecord

PROTOCOL_KEYWORDS = frozenset({"tcp", "udp", "icmp"})

_IPV4_RE = re.compile(r"(?<![\d.])(\d{1,3})\.(\d{1,3})\.(\d{1,3})\.(\d{1,3})(?![\d.])")
# integer arguments of a predicate: preceded by '(' or ',' and followed by ',' or ')'
_PORT_RE = re.compile(r"(?<=[(,])\s*'?(\d{1,5})'?\s*(?=[,)])")
_WORD_RE = re.compile(r"[A-Za-z]+")


def extract_identifiers(statement: str) -> frozenset[str]:
    """IPv4 literals, bare integers in argument position, and protocol keywords.

    >>> sorted(extract_identifiers("hacl('172.30.211.20','172.30.211.24',tcp,80)"))
    ['172.30.211.20', '172.30.211.24', '80', 'tcp']
    """
    found: set[str] = set()
    for m in _IPV4_RE.finditer(statement):
        if all(int(g) <= 255 for g in m.groups()):
            found.add(".".join(str(int(g)) for g in m.groups()))
    for m in _PORT_RE.finditer(statement):
        if int(m.group(1)) <= 65535:
            found.add(str(int(m.group(1))))
    found.update(w.lower() for w in _WORD_RE.findall(statement) if w.lower() in PROTOCOL_KEYWORDS)
    return frozenset(found)


@dataclass(frozen=True)
class NodeEndpointIndex:
    node_ids: tuple[int, ...]
    identifiers: tuple[frozenset[str], ...]

    @classmethod
    def from_sag(cls, sag: StaticAttackGraph) -> "NodeEndpointIndex":
        nodes = sag.graph.nodes
        return cls(tuple(v.id for v in nodes), tuple(extract_identifiers(v.statement) for v in nodes))

    def rows_for(self, ips: Iterable[str]) -> list[int]:
        wanted = {_canonical_ip(ip) for ip in ips}
        return [row for row, ids in enumerate(self.identifiers) if ids & wanted]


def _canonical_ip(ip: str) -> str:
    parts = str(ip).strip().split(".")
    if len(parts) == 4 and all(p.isdigit() for p in parts):
        return ".".join(str(int(p)) for p in parts)
    return str(ip).strip()


def map_flow_to_nodes(flow: FlowRecord, index: NodeEndpointIndex) -> set[int]:
    """Node ids whose identifier set contains the flow's source or destination IP."""
    return {index.node_ids[row] for row in index.rows_for((flow.src_ip, flow.dst_ip))}


@dataclass(frozen=True)
class GraphSample:
    node_features: np.ndarray
    label: int
    flow_id: int


def build_sample(sag: StaticAttackGraph, flow: FlowRecord, index: NodeEndpointIndex | None = None) -> GraphSample:
    index = index or NodeEndpointIndex.from_sag(sag)
    dyn = np.zeros((sag.n, len(flow.features)))
    rows = index.rows_for((flow.src_ip, flow.dst_ip))
    dyn[rows] = flow.features
    return GraphSample(np.hstack([sag.features, dyn]), flow.label, flow.record_id)


class SampleSet(Sequence[GraphSample]):
    """Per-flow graph samples sharing one SAG topology.

    Stored compactly as the shared static matrix, a per-sample node mask and
    the per-sample dynamic vector; ``node_feature_batch`` materialises the
    ``(batch, n, D + K)`` tensor on demand.
    """

    def __init__(self, static: np.ndarray, masks: np.ndarray, dynamic: np.ndarray,
                 labels: np.ndarray, flow_ids: np.ndarray):
        self.static = static
        self.masks = masks.astype(bool)
        self.dynamic = dynamic
        self.labels = np.asarray(labels, dtype=np.int64)
        self.flow_ids = np.asarray(flow_ids, dtype=np.int64)

    @property
    def n(self) -> int:
        return self.static.shape[0]

    @property
    def D(self) -> int:
        return self.static.shape[1]

    @property
    def K(self) -> int:
        return self.dynamic.shape[1]

    @property
    def width(self) -> int:
        return self.D + self.K

    @property
    def empty_mapping_rate(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.mean(~self.masks.any(axis=1)))

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return self.take(np.arange(len(self))[i])
        return GraphSample(self.node_feature_batch([i])[0], int(self.labels[i]), int(self.flow_ids[i]))

    def take(self, idx) -> "SampleSet":
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(self.static, self.masks[idx], self.dynamic[idx], self.labels[idx], self.flow_ids[idx])

    def node_feature_batch(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        out = np.empty((len(idx), self.n, self.width))
        out[:, :, : self.D] = self.static
        out[:, :, self.D:] = self.masks[idx][:, :, None] * self.dynamic[idx][:, None, :]
        return out


def build_dataset(sag: StaticAttackGraph, flows: FlowDataset) -> SampleSet:
    """One graph sample per flow, in flow order."""
    index = NodeEndpointIndex.from_sag(sag)
    masks = np.zeros((len(flows), sag.n), dtype=bool)
    row_cache: dict[tuple[str, str], list[int]] = {}
    for i, (src, dst) in enumerate(zip(flows.src_ip, flows.dst_ip)):
        key = (str(src), str(dst))
        if key not in row_cache:
            row_cache[key] = index.rows_for(key)
        masks[i, row_cache[key]] = True
    return SampleSet(sag.features, masks, np.asarray(flows.features, dtype=float), flows.labels, flows.record_ids)


# -- columnar interchange format -----------------------------------------------
#
#   # gnnnad-samples v1
#   n=<nodes> D=<static width> K=<dynamic width> samples=<count>
#   sample,flow_id,label,node,f0,...,f{D+K-1}
#   one row per node per sample, values written with repr() for exact round trip

def write_samples(samples: SampleSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# gnnnad-samples v1\n")
        fh.write(f"n={samples.n} D={samples.D} K={samples.K} samples={len(samples)}\n")
        fh.write("sample,flow_id,label,node," + ",".join(f"f{j}" for j in range(samples.width)) + "\n")
        for s in range(len(samples)):
            block = samples.node_feature_batch([s])[0]
            for v in range(samples.n):
                vals = ",".join(repr(float(x)) for x in block[v])
                fh.write(f"{s},{samples.flow_ids[s]},{samples.labels[s]},{v},{vals}\n")


def read_samples(path) -> SampleSet:
    with open(path, encoding="utf-8") as fh:
        if fh.readline().strip() != "# gnnnad-samples v1":
            raise ValueError("not a gnnnad samples file")
        meta = dict(kv.split("=") for kv in fh.readline().split())
        n, D, K, count = (int(meta[k]) for k in ("n", "D", "K", "samples"))
        fh.readline()
        data = np.loadtxt(fh, delimiter=",", ndmin=2) if count else np.zeros((0, 4 + D + K))
    if data.shape != (count * n, 4 + D + K):
        raise ValueError(f"samples file body has shape {data.shape}, expected {(count * n, 4 + D + K)}")
    blocks = data[:, 4:].reshape(count, n, D + K)
    static = blocks[0, :, :D] if count else np.zeros((n, D))
    dyn_blocks = blocks[:, :, D:]
    masks = np.abs(dyn_blocks).sum(axis=2) > 0
    dynamic = np.zeros((count, K))
    for s in range(count):
        if masks[s].any():
            dynamic[s] = dyn_blocks[s, np.flatnonzero(masks[s])[0]]
    heads = data[::n, :3].astype(np.int64) if count else np.zeros((0, 3), dtype=np.int64)
    return SampleSet(static, masks, dynamic, heads[:, 2], heads[:, 1])
