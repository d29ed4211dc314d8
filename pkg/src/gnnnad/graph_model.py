"""Attack-graph ingestion and bag-of-words node encoding.

Vertices and arcs follow the MulVAL CSV layout::

    VERTICES.CSV   id,"statement","kind",metric
    ARCS.CSV       src,dst[,weight]

The encoder turns node statements into a binary presence matrix over a
vocabulary collected from every statement in the graph.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

NODE_KINDS = ("AND", "OR", "LEAF")
_TOKEN_RE = re.compile(r"[A-Za-z0-9_]+")


class AttackGraphError(ValueError):
    """Raised for malformed or structurally invalid attack graphs."""


@dataclass(frozen=True)
class AttackGraphNode:
    id: int
    statement: str
    kind: str
    metric: float = 0.0


@dataclass(frozen=True)
class AttackGraph:
    nodes: tuple[AttackGraphNode, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        validate_graph(self.nodes, self.edges)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def node_ids(self) -> list[int]:
        return [node.id for node in self.nodes]

    def node(self, node_id: int) -> AttackGraphNode:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(node_id)

    def index_of(self) -> dict[int, int]:
        """Map node id to its row position (ascending id order)."""
        return {node.id: i for i, node in enumerate(self.nodes)}

    def adjacency(self) -> np.ndarray:
        """Symmetric 0/1 adjacency in row order; edges are treated as undirected."""
        pos = self.index_of()
        adj = np.zeros((self.n, self.n))
        for src, dst in self.edges:
            adj[pos[src], pos[dst]] = 1.0
            adj[pos[dst], pos[src]] = 1.0
        return adj

    def to_dot(self) -> str:
        lines = ["digraph attack_graph {"]
        shapes = {"AND": "ellipse", "OR": "diamond", "LEAF": "box"}
        for node in self.nodes:
            label = node.statement.replace("\\", "\\\\").replace('"', '\\"')
            lines.append(f'  {node.id} [label="{node.id}: {label}", shape={shapes[node.kind]}];')
        for src, dst in self.edges:
            lines.append(f"  {src} -> {dst};")
        lines.append("}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    token_to_index: dict[str, int] = field(compare=False, repr=False)

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        ordered = tuple(dict.fromkeys(tokens))
        return cls(ordered, {tok: i for i, tok in enumerate(ordered)})

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class StaticAttackGraph:
    graph: AttackGraph
    vocabulary: Vocabulary
    features: np.ndarray

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def D(self) -> int:
        return self.features.shape[1]


def _find_cycle(ids: Sequence[int], edges: Sequence[tuple[int, int]]) -> list[int] | None:
    succ: dict[int, list[int]] = {i: [] for i in ids}
    for s, d in edges:
        succ[s].append(d)
    WHITE, GREY, BLACK = 0, 1, 2
    color = dict.fromkeys(ids, WHITE)
    for root in ids:
        if color[root] != WHITE:
            continue
        # iterative DFS keeping the grey path for cycle reporting
        path = [root]
        stack = [iter(succ[root])]
        color[root] = GREY
        while stack:
            nxt = next(stack[-1], None)
            if nxt is None:
                color[path.pop()] = BLACK
                stack.pop()
            elif color[nxt] == GREY:
                return path[path.index(nxt):] + [nxt]
            elif color[nxt] == WHITE:
                color[nxt] = GREY
                path.append(nxt)
                stack.append(iter(succ[nxt]))
    return None


def validate_graph(nodes: Sequence[AttackGraphNode], edges: Sequence[tuple[int, int]]) -> None:
    ids = [node.id for node in nodes]
    seen: set[int] = set()
    for node in nodes:
        if node.id in seen:
            raise AttackGraphError(f"duplicate node id {node.id}")
        seen.add(node.id)
        if node.id < 1:
            raise AttackGraphError(f"node id must be positive, got {node.id}")
        if not node.statement.strip():
            raise AttackGraphError(f"node {node.id} has an empty statement")
        if node.kind not in NODE_KINDS:
            raise AttackGraphError(f"node {node.id} has unknown kind {node.kind!r}")
    if ids != sorted(ids):
        raise AttackGraphError("nodes must be stored in ascending id order")
    edge_set: set[tuple[int, int]] = set()
    for src, dst in edges:
        for end in (src, dst):
            if end not in seen:
                raise AttackGraphError(f"edge ({src},{dst}) references unknown node id {end}")
        if (src, dst) in edge_set:
            raise AttackGraphError(f"duplicate edge ({src},{dst})")
        edge_set.add((src, dst))
    cycle = _find_cycle(ids, edges)
    if cycle is not None:
        raise AttackGraphError("cycle detected: " + " -> ".join(map(str, cycle)))


def topological_order(graph: AttackGraph) -> list[int]:
    indeg = {i: 0 for i in graph.node_ids}
    succ: dict[int, list[int]] = {i: [] for i in graph.node_ids}
    for s, d in graph.edges:
        indeg[d] += 1
        succ[s].append(d)
    ready = sorted(i for i, k in indeg.items() if k == 0)
    order = []
    while ready:
        v = ready.pop(0)
        order.append(v)
        for w in succ[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                ready.append(w)
    if len(order) != graph.n:
        raise AttackGraphError("graph is not acyclic")
    return order


def make_graph(nodes: Iterable[AttackGraphNode], edges: Iterable[tuple[int, int]]) -> AttackGraph:
    return AttackGraph(tuple(sorted(nodes, key=lambda v: v.id)), tuple(edges))


def _csv_rows(text: str):
    reader = csv.reader(io.StringIO(text), skipinitialspace=True)
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        yield lineno, row


def parse_attack_graph(vertices_text: str, arcs_text: str, reverse_arcs: bool = False) -> AttackGraph:
    """Parse MulVAL ``VERTICES.CSV``/``ARCS.CSV`` contents into a validated graph.

    With ``reverse_arcs`` each arc row is read as ``dst,src``.
    """
    nodes: dict[int, AttackGraphNode] = {}
    for lineno, row in _csv_rows(vertices_text):
        if len(row) < 3:
            raise AttackGraphError(f"vertices line {lineno}: expected id,statement,kind[,metric]")
        try:
            node_id = int(row[0].strip())
            metric = float(row[3]) if len(row) > 3 and row[3].strip() else 0.0
        except ValueError as exc:
            raise AttackGraphError(f"vertices line {lineno}: {exc}") from None
        kind = row[2].strip().upper()
        if kind not in NODE_KINDS:
            raise AttackGraphError(f"vertices line {lineno}: unknown kind {row[2]!r}")
        statement = row[1].strip()
        if not statement:
            raise AttackGraphError(f"vertices line {lineno}: empty statement")
        if node_id in nodes:
            raise AttackGraphError(f"vertices line {lineno}: duplicate node id {node_id}")
        nodes[node_id] = AttackGraphNode(node_id, statement, kind, metric)

    edges: list[tuple[int, int]] = []
    for lineno, row in _csv_rows(arcs_text):
        if len(row) < 2:
            raise AttackGraphError(f"arcs line {lineno}: expected src,dst[,weight]")
        try:
            a, b = int(row[0].strip()), int(row[1].strip())
        except ValueError as exc:
            raise AttackGraphError(f"arcs line {lineno}: {exc}") from None
        src, dst = (b, a) if reverse_arcs else (a, b)
        for end in (src, dst):
            if end not in nodes:
                raise AttackGraphError(f"arcs line {lineno}: unknown node id {end}")
        edges.append((src, dst))
    return make_graph(nodes.values(), edges)


def load_attack_graph(vertices_path, arcs_path, reverse_arcs: bool = False) -> AttackGraph:
    with open(vertices_path, encoding="utf-8") as fh:
        vertices = fh.read()
    with open(arcs_path, encoding="utf-8") as fh:
        arcs = fh.read()
    return parse_attack_graph(vertices, arcs, reverse_arcs)


def write_attack_graph(graph: AttackGraph, vertices_path, arcs_path) -> None:
    with open(vertices_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_NONNUMERIC, lineterminator="\n")
        for node in graph.nodes:
            writer.writerow([node.id, node.statement, node.kind, node.metric])
    with open(arcs_path, "w", encoding="utf-8", newline="") as fh:
        for src, dst in graph.edges:
            fh.write(f"{src},{dst},-1\n")


def tokenize_statement(statement: str) -> list[str]:
    """Lower-cased maximal runs of ``[A-Za-z0-9_]``.

    >>> tokenize_statement("execCode(webServer,root)")
    ['execcode', 'webserver', 'root']
    """
    tokens = [tok.lower() for tok in _TOKEN_RE.findall(statement)]
    if not tokens:
        log.warning("statement %r yields no tokens", statement)
    return tokens


def build_vocabulary(graph: AttackGraph) -> Vocabulary:
    return Vocabulary.from_tokens(tok for node in graph.nodes for tok in tokenize_statement(node.statement))


def encode_attack_graph(graph: AttackGraph, vocabulary: Vocabulary | None = None) -> StaticAttackGraph:
    """Encode node statements as binary token-presence rows.

    The vocabulary is collected in first-occurrence order over nodes in
    ascending id order. Passing a ``vocabulary`` reuses a frozen one; any token
    it does not contain is rejected.
    """
    if vocabulary is None:
        vocabulary = build_vocabulary(graph)
    index = vocabulary.token_to_index
    features = np.zeros((graph.n, len(vocabulary)))
    for row, node in enumerate(graph.nodes):
        for tok in tokenize_statement(node.statement):
            if tok not in index:
                raise AttackGraphError(f"token {tok!r} of node {node.id} is not in the frozen vocabulary")
            features[row, index[tok]] = 1.0
    return StaticAttackGraph(graph, vocabulary, features)


# -- fixture generation --------------------------------------------------------

@dataclass
class ToyNetwork:
    """Hosts, reachability ``(src, dst, protocol, port)``, vulnerabilities, attacker host."""

    hosts: list[str]
    reachability: list[tuple[str, str, str, int]]
    vulnerabilities: dict[str, list[str]]
    attacker: str


def _q(name: str) -> str:
    return f"'{name}'" if not name.isidentifier() else name


def generate_fixture_graph(network: ToyNetwork) -> AttackGraph:
    """Derive a MulVAL-shaped DAG from a toy network.

    A single rule is applied breadth-first from the attacker's host::

        attackerLocated(h) | execCode(h)  AND  hacl(h, h', p, q)  AND  vulExists(h', v)
            =>  execCode(h')

    Facts are LEAF nodes, rule applications AND nodes, derived execCode facts
    OR nodes. A host is only targeted by rules whose premise host was
    compromised in an earlier round, so the result is acyclic.
    """
    if not network.hosts:
        raise AttackGraphError("toy network has no hosts")
    if network.attacker not in network.hosts:
        raise AttackGraphError(f"attacker location {network.attacker!r} is not a host")
    hosts = set(network.hosts)
    for src, dst, _, _ in network.reachability:
        if src not in hosts or dst not in hosts:
            raise AttackGraphError(f"reachability ({src},{dst}) references an unknown host")

    nodes: list[AttackGraphNode] = []
    edges: list[tuple[int, int]] = []
    ids: dict[str, int] = {}

    def add(statement: str, kind: str) -> int:
        if statement not in ids:
            ids[statement] = len(nodes) + 1
            nodes.append(AttackGraphNode(ids[statement], statement, kind, 0.0 if kind != "LEAF" else 1.0))
        return ids[statement]

    premise = {network.attacker: add(f"attackerLocated({_q(network.attacker)})", "LEAF")}
    hacl = {r: add(f"hacl({_q(r[0])},{_q(r[1])},{r[2]},{r[3]})", "LEAF") for r in network.reachability}
    vuln = {
        (h, v): add(f"vulExists({_q(h)},'{v}')", "LEAF")
        for h in network.hosts
        for v in network.vulnerabilities.get(h, [])
    }

    frontier = [network.attacker]
    while frontier:
        reached: dict[str, list[int]] = {}
        for src in frontier:
            for r in network.reachability:
                dst = r[1]
                if r[0] != src or dst in premise:
                    continue
                for v in network.vulnerabilities.get(dst, []):
                    rule = add(f"RULE {len(nodes) + 1} (remote exploit of {_q(dst)} via {v})", "AND")
                    edges += [(premise[src], rule), (hacl[r], rule), (vuln[(dst, v)], rule)]
                    reached.setdefault(dst, []).append(rule)
        for dst, rules in reached.items():
            derived = add(f"execCode({_q(dst)},root)", "OR")
            edges += [(rule, derived) for rule in rules]
            premise[dst] = derived
        frontier = list(reached)
    return make_graph(nodes, edges)
