"""GSAGE: stacked SAGE-convolution layers, global pooling, linear head.

Each layer computes, for every node ``i``::

    h_i' = dropout(relu(W^T . AGGR({h_i} + {h_j : j in N(i)})))

with ``AGGR`` a sum (or mean) over the node and its undirected neighbours and
no bias term. Node rows are pooled (mean or sum) into the graph embedding and
a linear head produces class logits for cross-entropy training. All samples
share one topology, so a batch is a ``(batch, n, width)`` tensor.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numeric
from .fusion import SampleSet
from .numeric import Adam, Parameter, glorot_uniform, make_rng

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class GsageConfig:
    layer_count: int = 3
    hidden_units: int = 256
    dropout_p: float = 0.2
    neighbor_pool: str = "sum"
    graph_pool: str = "mean"
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.layer_count < 1:
            raise ValueError("layer_count must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.neighbor_pool not in ("sum", "mean"):
            raise ValueError(f"unknown neighbor_pool {self.neighbor_pool!r}")
        if self.graph_pool not in ("sum", "mean"):
            raise ValueError(f"unknown graph_pool {self.graph_pool!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainingHistory:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loss)


def aggregation_matrix(adjacency: np.ndarray, pool: str) -> np.ndarray:
    """``A + I`` for sum pooling, row-normalised for mean pooling."""
    agg = np.asarray(adjacency, dtype=float) + np.eye(adjacency.shape[0])
    if pool == "mean":
        agg /= agg.sum(axis=1, keepdims=True)
    return agg


class GsageModel:
    def __init__(self, adjacency: np.ndarray, in_width: int, num_classes: int,
                 config: GsageConfig | None = None, static_width: int | None = None):
        self.config = config or GsageConfig()
        self.adjacency = np.asarray(adjacency, dtype=float)
        self.n = self.adjacency.shape[0]
        self.in_width = in_width
        self.static_width = static_width
        self.num_classes = num_classes
        self.agg = aggregation_matrix(self.adjacency, self.config.neighbor_pool)
        rng = make_rng(self.config.seed)
        hidden = self.config.hidden_units
        widths = [in_width] + [hidden] * self.config.layer_count
        self.layers = [Parameter(glorot_uniform(a, b, rng)) for a, b in zip(widths[:-1], widths[1:])]
        self.head_w = Parameter(glorot_uniform(hidden, num_classes, rng))
        self.head_b = Parameter(np.zeros((1, num_classes)))
        self._cache = None

    @classmethod
    def for_samples(cls, adjacency, samples: SampleSet, num_classes: int, config=None) -> "GsageModel":
        return cls(adjacency, samples.width, num_classes, config, static_width=samples.D)

    @property
    def parameters(self) -> list[Parameter]:
        return [*self.layers, self.head_w, self.head_b]

    # -- forward / backward -----------------------------------------------------

    def layer_forward(self, h: np.ndarray, layer: int, training: bool = False, rng=None) -> np.ndarray:
        """One SC layer on a node-major ``(n, batch, width)`` tensor."""
        n, b, f = h.shape
        z = (self.agg @ h.reshape(n, b * f)).reshape(n * b, f)
        pre = numeric.matmul(z, self.layers[layer].value)
        out, mask = numeric.dropout(numeric.relu(pre), self.config.dropout_p, rng, training)
        if self._cache is not None:
            # out > 0 exactly where relu is active and dropout kept the unit
            self._cache.append((z, out, 1.0 if mask is None else 1.0 / (1.0 - self.config.dropout_p)))
        return out.reshape(n, b, -1)

    def forward_batch(self, x: np.ndarray, training: bool = False, rng=None, keep_cache: bool = False):
        """Return ``(embeddings, logits)`` for a ``(batch, n, width)`` tensor."""
        if x.shape[1:] != (self.n, self.in_width):
            raise numeric.ShapeError(f"sample batch shape {x.shape[1:]} != model input {(self.n, self.in_width)}")
        self._cache = [] if keep_cache else None
        h = np.ascontiguousarray(x.transpose(1, 0, 2))
        for layer in range(len(self.layers)):
            h = self.layer_forward(h, layer, training, rng)
        emb = h.mean(axis=0) if self.config.graph_pool == "mean" else h.sum(axis=0)
        logits = emb @ self.head_w.value + self.head_b.value
        if keep_cache:
            self._cache.append(emb)
        return emb, logits

    def backward(self, grad_logits: np.ndarray) -> None:
        """Accumulate parameter gradients from d(loss)/d(logits) of the cached pass."""
        cache, self._cache = self._cache, None
        emb = cache.pop()
        b = emb.shape[0]
        self.head_w.grad += emb.T @ grad_logits
        self.head_b.grad += grad_logits.sum(axis=0, keepdims=True)
        g_emb = grad_logits @ self.head_w.value.T
        if self.config.graph_pool == "mean":
            g_emb = g_emb / self.n
        g = np.tile(g_emb, (self.n, 1))  # rows ordered (node, sample) like the cache
        for layer in reversed(range(len(self.layers))):
            z, out, keep_scale = cache[layer]
            g = g * (out > 0)
            w = self.layers[layer]
            w.grad += keep_scale * (z.T @ g)
            if layer:
                gz = g @ (keep_scale * w.value.T)
                g = (self.agg.T @ gz.reshape(self.n, -1)).reshape(self.n * b, -1)

    def zero_grad(self) -> None:
        for p in self.parameters:
            p.zero_grad()

    def loss_and_grad(self, x: np.ndarray, labels, training: bool = False, rng=None) -> float:
        self.zero_grad()
        _, logits = self.forward_batch(x, training, rng, keep_cache=True)
        loss, grad = numeric.softmax_cross_entropy(logits, labels)
        self.backward(grad)
        return loss

    # -- checkpoint -------------------------------------------------------------

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        arrays = [(f"layer{i}", p.value) for i, p in enumerate(self.layers)]
        return arrays + [("head_w", self.head_w.value), ("head_b", self.head_b.value), ("adjacency", self.adjacency)]

    def save(self, path) -> None:
        meta = {"n": self.n, "in_width": self.in_width, "static_width": self.static_width,
                "num_classes": self.num_classes}
        numeric.save_checkpoint(path, self.named_arrays(), self.config.seed, self.config.to_dict(), meta)

    @classmethod
    def load(cls, path, expect_width: int | None = None) -> "GsageModel":
        header, arrays = numeric.load_checkpoint(path)
        meta = header["meta"]
        model = cls(arrays["adjacency"], meta["in_width"], meta["num_classes"],
                    GsageConfig(**header["config"]), meta.get("static_width"))
        if expect_width is not None and expect_width != model.in_width:
            raise numeric.ShapeError(f"checkpoint expects width {model.in_width}, got {expect_width}")
        expected = dict((name, a.shape) for name, a in model.named_arrays())
        header, arrays = numeric.load_checkpoint(path, expected)
        for p, name in zip(model.parameters, [f"layer{i}" for i in range(len(model.layers))] + ["head_w", "head_b"]):
            p.value[...] = arrays[name]
        return model


def sc_layer_forward(h: np.ndarray, adjacency: np.ndarray, weight: np.ndarray, pool: str = "sum",
                     dropout_p: float = 0.0, training: bool = False, rng=None) -> np.ndarray:
    """One SAGE-convolution layer on an ``(n, width)`` node matrix."""
    if h.shape[0] != adjacency.shape[0]:
        raise numeric.ShapeError("node matrix rows differ from adjacency size")
    z = aggregation_matrix(adjacency, pool) @ h
    out, _ = numeric.dropout(numeric.relu(numeric.matmul(z, weight)), dropout_p, rng, training)
    return out


def forward(model: GsageModel, sample, training: bool = False, rng=None):
    """``(embedding, logits)`` for a single :class:`~gnnnad.fusion.GraphSample` or node matrix."""
    x = getattr(sample, "node_features", sample)
    emb, logits = model.forward_batch(np.asarray(x)[None], training, rng)
    return emb[0], logits[0]


def _batches(count: int, size: int):
    for start in range(0, count, size):
        yield slice(start, min(start + size, count))


def train(model: GsageModel, samples: SampleSet, config: GsageConfig | None = None):
    """Mini-batch Adam on softmax cross-entropy; returns ``(model, history)``.

    Shuffling and dropout draw from a stream seeded by ``config.seed``, so two
    calls with equal inputs produce bit-identical weights.
    """
    config = config or model.config
    history = TrainingHistory()
    if len(np.unique(samples.labels)) < 2:
        raise TrainingError("training requires at least two classes")
    if samples.labels.max() >= model.num_classes:
        raise TrainingError("sample label exceeds model class count")
    rng = make_rng(config.seed + 1)
    opt = Adam(lr=config.learning_rate)
    for epoch in range(config.epochs):
        start = time.perf_counter()
        order = rng.permutation(len(samples))
        total_loss, correct = 0.0, 0
        for sl in _batches(len(order), config.batch_size):
            idx = order[sl]
            x = samples.node_feature_batch(idx)
            y = samples.labels[idx]
            model.zero_grad()
            _, logits = model.forward_batch(x, training=True, rng=rng, keep_cache=True)
            loss, grad = numeric.softmax_cross_entropy(logits, y)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {sl.start}")
            model.backward(grad)
            opt.step(model.parameters)
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y))
        history.loss.append(total_loss / len(samples))
        history.accuracy.append(correct / len(samples))
        history.seconds.append(time.perf_counter() - start)
        log.debug("epoch %d loss %.6f acc %.4f", epoch, history.loss[-1], history.accuracy[-1])
    return model, history


def embed(model: GsageModel, samples: SampleSet, batch_size: int = 256) -> np.ndarray:
    """Eval-mode graph embeddings, one row per sample in input order."""
    out = np.empty((len(samples), model.config.hidden_units))
    for sl in _batches(len(samples), batch_size):
        out[sl], _ = model.forward_batch(samples.node_feature_batch(np.arange(sl.start, sl.stop)))
    return out


def logits(model: GsageModel, samples: SampleSet, batch_size: int = 256) -> np.ndarray:
    out = np.empty((len(samples), model.num_classes))
    for sl in _batches(len(samples), batch_size):
        _, out[sl] = model.forward_batch(samples.node_feature_batch(np.arange(sl.start, sl.stop)))
    return out


def predict_head(model: GsageModel, sample) -> int:
    """Argmax of the head logits; ``np.argmax`` already breaks ties toward the lowest id."""
    _, out = forward(model, sample)
    return int(np.argmax(out))


def write_embeddings(path, embeddings: np.ndarray, labels, sample_ids=None) -> None:
    sample_ids = range(len(embeddings)) if sample_ids is None else sample_ids
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("sample_id,label," + ",".join(f"e{j}" for j in range(embeddings.shape[1])) + "\n")
        for sid, label, row in zip(sample_ids, labels, embeddings):
            fh.write(f"{sid},{label}," + ",".join(repr(float(x)) for x in row) + "\n")
