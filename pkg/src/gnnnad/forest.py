"""Random forest of Gini CART trees over graph embeddings."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

_TIE = 1e-12


@dataclass
class ForestConfig:
    tree_count: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    features_per_split: int | None = None  # None -> ceil(sqrt(dim))
    bootstrap: bool = True
    soft_voting: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    counts: np.ndarray | None = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def majority(self) -> int:
        return int(np.argmax(self.counts))

    def leaf_for(self, x: np.ndarray) -> "TreeNode":
        node = self
        while not node.is_leaf:
            node = node.left if x[node.feature] <= node.threshold else node.right
        return node

    def structure(self):
        """Nested tuples for structural comparison."""
        if self.is_leaf:
            return ("leaf", tuple(int(c) for c in self.counts))
        return (self.feature, self.threshold, self.left.structure(), self.right.structure())


def gini(labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("gini of an empty label set")
    _, counts = np.unique(labels, return_counts=True)
    p = counts / labels.size
    return float(1.0 - np.sum(p * p))


def _gini_counts(counts: np.ndarray, total) -> np.ndarray:
    total = np.asarray(total, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, 1.0 - (counts * counts).sum(axis=-1) / np.maximum(total, 1) ** 2, 0.0)


def best_split(points: np.ndarray, labels: np.ndarray, features=None, num_classes: int | None = None,
               min_samples_leaf: int = 1):
    """Return ``(feature, threshold, gain)`` minimising weighted child Gini, or ``None``.

    Thresholds are midpoints between consecutive distinct values; a point
    goes left when ``x[feature] <= threshold``. Ties keep the lower feature
    index, then the lower threshold.
    """
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n < 2:
        return None
    num_classes = num_classes or int(labels.max()) + 1
    features = range(points.shape[1]) if features is None else sorted(features)
    parent = np.bincount(labels, minlength=num_classes).astype(float)
    parent_gini = float(_gini_counts(parent, n))
    onehot = np.eye(num_classes)[labels]
    best = None
    best_score = math.inf
    for f in features:
        order = np.argsort(points[:, f], kind="stable")
        vals = points[order, f]
        left = np.cumsum(onehot[order], axis=0)[:-1]
        n_left = np.arange(1, n)
        valid = vals[1:] > vals[:-1]
        if min_samples_leaf > 1:
            valid &= (n_left >= min_samples_leaf) & (n - n_left >= min_samples_leaf)
        if not valid.any():
            continue
        cut = np.flatnonzero(valid)
        nl = n_left[cut].astype(float)
        lc = left[cut]
        rc = parent - lc
        score = (nl * _gini_counts(lc, nl) + (n - nl) * _gini_counts(rc, n - nl)) / n
        k = int(np.flatnonzero(score <= score.min() + _TIE)[0])  # lowest threshold among ties
        if score[k] < best_score - _TIE:
            best_score = float(score[k])
            best = (int(f), float((vals[cut[k]] + vals[cut[k] + 1]) / 2.0))
    if best is None:
        return None
    gain = parent_gini - best_score
    if gain <= _TIE:
        return None
    return best[0], best[1], gain


class RandomForest:
    def __init__(self, config: ForestConfig | None = None):
        self.config = config or ForestConfig()
        self.trees: list[TreeNode] = []
        self.num_classes = 0
        self.dim = 0

    def _grow(self, x, y, idx, depth, rng, k) -> TreeNode:
        counts = np.bincount(y[idx], minlength=self.num_classes)
        node = TreeNode(counts=counts)
        cfg = self.config
        if (np.count_nonzero(counts) <= 1
                or (cfg.max_depth is not None and depth >= cfg.max_depth)
                or len(idx) < 2 * cfg.min_samples_leaf):
            return node
        cand = np.sort(rng.choice(self.dim, size=k, replace=False)) if k < self.dim else None
        split = best_split(x[idx], y[idx], cand, self.num_classes, cfg.min_samples_leaf)
        if split is None:
            return node
        f, thr, _ = split
        go_left = x[idx, f] <= thr
        node.feature, node.threshold = f, thr
        node.left = self._grow(x, y, idx[go_left], depth + 1, rng, k)
        node.right = self._grow(x, y, idx[~go_left], depth + 1, rng, k)
        return node

    def fit(self, embeddings, labels) -> "RandomForest":
        x = np.asarray(embeddings, dtype=float)
        y = np.asarray(labels, dtype=np.int64)
        if len(np.unique(y)) < 2:
            raise ValueError("random forest needs at least two classes")
        self.num_classes = int(y.max()) + 1
        self.dim = x.shape[1]
        k = self.config.features_per_split or math.ceil(math.sqrt(self.dim))
        k = min(k, self.dim)
        self.trees = []
        for t in range(self.config.tree_count):
            rng = np.random.default_rng(self.config.seed + t)
            if self.config.bootstrap:
                idx = rng.integers(0, len(y), size=len(y))
            else:
                idx = np.arange(len(y))
            self.trees.append(self._grow(x, y, idx, 0, rng, k))
        return self

    def _check(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise ValueError(f"embedding dimension {x.shape[1]} != forest dimension {self.dim}")
        return x

    def votes(self, x) -> np.ndarray:
        """``(samples, classes)`` vote counts (hard) or summed leaf distributions (soft)."""
        x = self._check(x)
        out = np.zeros((len(x), self.num_classes))
        for tree in self.trees:
            for i, row in enumerate(x):
                leaf = tree.leaf_for(row)
                if self.config.soft_voting:
                    out[i] += leaf.counts / leaf.counts.sum()
                else:
                    out[i, leaf.majority()] += 1
        return out

    def predict_proba(self, x) -> np.ndarray:
        v = self.votes(x)
        return v / v.sum(axis=1, keepdims=True)

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.votes(x), axis=1)

    # -- text serialisation ---------------------------------------------------
    #
    #   forest v1 trees=<T> classes=<C> dim=<d>
    #   config <json>
    #   tree <t>
    #   N <feature> <threshold repr>     internal node, preorder
    #   L <count_0> ... <count_{C-1}>    leaf

    def dumps(self) -> str:
        lines = [f"forest v1 trees={len(self.trees)} classes={self.num_classes} dim={self.dim}",
                 "config " + json.dumps(self.config.to_dict(), sort_keys=True)]
        for t, tree in enumerate(self.trees):
            lines.append(f"tree {t}")
            stack = [tree]
            while stack:
                node = stack.pop()
                if node.is_leaf:
                    lines.append("L " + " ".join(str(int(c)) for c in node.counts))
                else:
                    lines.append(f"N {node.feature} {node.threshold!r}")
                    stack += [node.right, node.left]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RandomForest":
        lines = iter(text.splitlines())
        head = dict(kv.split("=") for kv in next(lines).split()[2:])
        cfg = json.loads(next(lines).split(" ", 1)[1])
        forest = cls(ForestConfig(**cfg))
        forest.num_classes, forest.dim = int(head["classes"]), int(head["dim"])
        body = [ln for ln in lines if not ln.startswith("tree ")]
        pos = 0

        def read() -> TreeNode:
            nonlocal pos
            parts = body[pos].split()
            pos += 1
            if parts[0] == "L":
                return TreeNode(counts=np.array([int(c) for c in parts[1:]]))
            node = TreeNode(feature=int(parts[1]), threshold=float(parts[2]))
            node.left = read()
            node.right = read()
            return node

        forest.trees = [read() for _ in range(int(head["trees"]))]
        return forest


def fit_forest(embeddings, labels, config: ForestConfig | None = None) -> RandomForest:
    return RandomForest(config).fit(embeddings, labels)


def predict(forest: RandomForest, embedding) -> int:
    return int(forest.predict(embedding)[0])


def plurality(votes, num_classes: int) -> int:
    """Most common vote, ties toward the lowest class id."""
    return int(np.argmax(np.bincount(np.asarray(votes), minlength=num_classes)))
