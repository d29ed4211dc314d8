"""Dense float64 primitives with hand-written gradients, Adam, and a
finite-difference gradient checker.

Matrices are plain ``numpy.ndarray`` of dtype float64. Random streams come
from ``numpy.random.Generator`` on the PCG64 bit generator, so a seed fixes
every initialisation, dropout mask and shuffle.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

RNG_ALGORITHM = "PCG64"


class ShapeError(ValueError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"cannot add {a.shape} and {b.shape}")
    return a + b


def scale(a: np.ndarray, c: float) -> np.ndarray:
    return a * c


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Subgradient at ``x == 0`` is taken as 0."""
    return grad * (x > 0)


def dropout(x: np.ndarray, p: float, rng: np.random.Generator | None, training: bool):
    """Inverted dropout. Returns ``(output, keep)`` where ``keep`` is the boolean
    survivor mask (``None`` when dropout is inactive); survivors are scaled by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x, None
    keep = rng.random(x.shape, dtype=np.float32) >= p
    out = x * keep
    out *= 1.0 / (1.0 - p)
    return out, keep


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient with respect to ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise ShapeError("one label per row required")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= classes:
        raise ValueError(f"label out of range for {classes} classes")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(batch)
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / batch


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray = None

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=float)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise ShapeError("gradient shape differs from value shape")

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


@dataclass
class Adam:
    """Adam with bias correction; moments are allocated lazily per parameter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: Sequence[Parameter]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p.value) for p in params]
            self.v = [np.zeros_like(p.value) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(params: Sequence[Parameter], state: Adam) -> Sequence[Parameter]:
    state.step(params)
    return params


def finite_difference_check(
    loss_fn: Callable[[], float],
    params: Sequence[Parameter],
    epsilon: float = 1e-5,
    coordinates: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> float:
    """Max relative error between ``param.grad`` and central differences.

    ``loss_fn`` must be deterministic and evaluate with the current parameter
    values; the analytic gradients must already be stored in ``param.grad``.
    The error per coordinate is ``|analytic - numeric| / max(|numeric|, floor)``.
    With ``coordinates`` set, that many coordinates are drawn uniformly over
    all parameters.
    """
    slots = [(i, j) for i, p in enumerate(params) for j in range(p.value.size)]
    if coordinates is not None and coordinates < len(slots):
        rng = rng or make_rng(0)
        slots = [slots[k] for k in sorted(rng.choice(len(slots), size=coordinates, replace=False))]
    worst = 0.0
    for i, j in slots:
        flat = params[i].value.reshape(-1)
        analytic = params[i].grad.reshape(-1)[j]
        orig = flat[j]
        flat[j] = orig + epsilon
        up = loss_fn()
        flat[j] = orig - epsilon
        down = loss_fn()
        flat[j] = orig
        numeric = (up - down) / (2.0 * epsilon)
        worst = max(worst, abs(analytic - numeric) / max(abs(numeric), floor))
    return worst


# -- checkpoint format -----------------------------------------------------------
#
#   line 1   b"GNNNAD-CKPT v1\n"
#   line 2   UTF-8 JSON header + b"\n":
#            {"arrays": [[name, rows, cols], ...], "seed": int,
#             "config_hash": sha256 hex of the canonical config JSON, "meta": {...}}
#   body     each array in header order as row-major little-endian float64

CKPT_MAGIC = b"GNNNAD-CKPT v1\n"


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def save_checkpoint(path, arrays: Sequence[tuple[str, np.ndarray]], seed: int, config: dict, meta: dict | None = None) -> None:
    header = {
        "arrays": [[name, int(a.shape[0]), int(a.shape[1])] for name, a in arrays],
        "seed": int(seed),
        "config_hash": config_hash(config),
        "config": config,
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path, expected_shapes: dict[str, tuple[int, int]] | None = None):
    """Return ``(header, {name: array})``; shapes are checked against ``expected_shapes``."""
    with open(path, "rb") as fh:
        if fh.readline() != CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        header = json.loads(fh.readline())
        body = fh.read()
    arrays = {}
    offset = 0
    for name, rows, cols in header["arrays"]:
        nbytes = rows * cols * 8
        if offset + nbytes > len(body):
            raise ValueError(f"{path}: truncated at array {name}")
        arrays[name] = np.frombuffer(body, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols).copy()
        offset += nbytes
        if expected_shapes is not None and name in expected_shapes and expected_shapes[name] != (rows, cols):
            raise ShapeError(f"{path}: array {name} has shape {(rows, cols)}, expected {expected_shapes[name]}")
    if offset != len(body):
        raise ValueError(f"{path}: {len(body) - offset} trailing bytes")
    if expected_shapes is not None:
        missing = set(expected_shapes) - set(arrays)
        if missing:
            raise ShapeError(f"{path}: missing arrays {sorted(missing)}")
    return header, arrays
