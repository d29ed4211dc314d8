"""Experiment protocol: stratified splits, repeated GSAGE+RF runs, metrics,
sampling-rate sweeps and test-time measurement."""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import gsage
from .forest import ForestConfig, RandomForest, fit_forest
from .fusion import SampleSet, build_dataset
from .graph_model import StaticAttackGraph
from .gsage import GsageConfig, GsageModel, TrainingHistory
from .traffic import DEFAULT_RATES, FlowDataset, apply_minmax, fit_minmax, rate_sample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _ratio(num: int, den: int) -> Fraction | None:
    return Fraction(num, den) if den else None


@dataclass(frozen=True)
class Metrics:
    """Exact metric values; ``None`` marks an undefined ratio (zero denominator)."""

    accuracy: Fraction | None
    recall: Fraction | None
    precision: Fraction | None
    f1: Fraction | None

    @classmethod
    def from_counts(cls, c: ConfusionCounts) -> "Metrics":
        recall = _ratio(c.tp, c.tp + c.fn)
        precision = _ratio(c.tp, c.tp + c.fp)
        f1 = None
        if recall is not None and precision is not None and recall + precision:
            f1 = 2 * recall * precision / (recall + precision)
        return cls(_ratio(c.tp + c.tn, c.total), recall, precision, f1)

    def as_floats(self) -> dict[str, float | None]:
        return {k: (None if v is None else float(v)) for k, v in asdict(self).items()}


def confusion(predictions, truth, positive: Iterable[int] | None = None, benign: int = 0) -> ConfusionCounts:
    """Binary confusion counts; positive = any label in ``positive`` (default: not benign)."""
    pred = np.asarray(predictions)
    true = np.asarray(truth)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    if positive is None:
        p_pred, p_true = pred != benign, true != benign
    else:
        pos = np.array(sorted(positive))
        p_pred, p_true = np.isin(pred, pos), np.isin(true, pos)
    return ConfusionCounts(
        tp=int(np.sum(p_pred & p_true)), fp=int(np.sum(p_pred & ~p_true)),
        tn=int(np.sum(~p_pred & ~p_true)), fn=int(np.sum(~p_pred & p_true)),
    )


def compute_metrics(predictions, truth, positive=None, benign: int = 0) -> Metrics:
    return Metrics.from_counts(confusion(predictions, truth, positive, benign))


def class_confusion(predictions, truth, num_classes: int) -> list[list[int]]:
    mat = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(mat, (np.asarray(truth), np.asarray(predictions)), 1)
    return mat.tolist()


@dataclass
class MetricsReport:
    runs: list[dict]
    mean: dict[str, float | None]

    @classmethod
    def from_runs(cls, metrics: Sequence[Metrics]) -> "MetricsReport":
        runs = [m.as_floats() for m in metrics]
        mean = {}
        for key in ("accuracy", "recall", "precision", "f1"):
            vals = [r[key] for r in runs if r[key] is not None]
            mean[key] = float(np.mean(vals)) if vals else None
        return cls(runs, mean)


def split_train_test(labels, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Stratified seeded split into sorted train / test index arrays.

    Each class with at least two members contributes ``round((1 - fraction) *
    size)`` (at least one, at most ``size - 1``) members to the test side.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"train fraction must be in (0, 1), got {fraction}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cid in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cid))
        if len(members) < 2:
            log.warning("class %s has fewer than 2 samples; placed in train", cid)
            train.append(members)
            continue
        n_test = min(max(int(round((1.0 - fraction) * len(members))), 1), len(members) - 1)
        test.append(members[:n_test])
        train.append(members[n_test:])
    cat = lambda parts: np.sort(np.concatenate(parts)) if parts else np.array([], dtype=np.int64)
    return cat(train), cat(test)


@dataclass
class ExperimentConfig:
    train_fraction: float = 0.8
    repeats: int = 10
    base_seed: int = 0
    rates: tuple[float, ...] = DEFAULT_RATES
    positive_labels: tuple[int, ...] | None = None
    benign_label: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        self.rates = tuple(float(r) for r in self.rates)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rates"] = list(self.rates)
        return d


@dataclass
class RunResult:
    seed: int
    metrics: Metrics
    counts: ConfusionCounts
    class_confusion: list[list[int]]
    history: TrainingHistory
    model: GsageModel
    forest: RandomForest
    test_embeddings: np.ndarray
    test_samples: SampleSet
    predictions: np.ndarray
    empty_mapping_rate: float
    timing: dict[str, float] = field(default_factory=dict)


@dataclass
class ExperimentResult:
    report: MetricsReport
    runs: list[RunResult]

    def to_json(self, config_echo: dict | None = None) -> dict:
        """Report document; everything wall-clock lives under ``timing``."""
        return {
            "config": config_echo or {},
            "runs": [
                {"seed": r.seed, "metrics": r.metrics.as_floats(), "confusion": asdict(r.counts),
                 "class_confusion": r.class_confusion, "empty_mapping_rate": r.empty_mapping_rate,
                 "train_loss": r.history.loss, "train_accuracy": r.history.accuracy,
                 "test_size": len(r.predictions)}
                for r in self.runs
            ],
            "mean": self.report.mean,
            "empty_mapping_rate": float(np.mean([r.empty_mapping_rate for r in self.runs])),
            "timing": [r.timing for r in self.runs],
        }


def _with_seed(cfg, seed: int):
    return type(cfg)(**{**cfg.to_dict(), "seed": seed})


def run_once(sag: StaticAttackGraph, flows: FlowDataset, seed: int, experiment: ExperimentConfig,
             gsage_config: GsageConfig, forest_config: ForestConfig) -> RunResult:
    """Split, normalise on train, fuse, train GSAGE, fit the forest on embeddings, score test."""
    timing = {}
    t0 = time.perf_counter()
    train_idx, test_idx = split_train_test(flows.labels, experiment.train_fraction, seed)
    train_flows, test_flows = flows.subset(train_idx), flows.subset(test_idx)
    params = fit_minmax(train_flows)
    train_samples = build_dataset(sag, apply_minmax(train_flows, params))
    test_samples = build_dataset(sag, apply_minmax(test_flows, params))
    timing["prepare"] = time.perf_counter() - t0

    num_classes = max(flows.class_names) + 1
    gcfg = _with_seed(gsage_config, seed)
    model = GsageModel.for_samples(sag.graph.adjacency(), train_samples, num_classes, gcfg)
    t0 = time.perf_counter()
    model, history = gsage.train(model, train_samples, gcfg)
    timing["train_gsage"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    forest = fit_forest(gsage.embed(model, train_samples), train_samples.labels, _with_seed(forest_config, seed))
    timing["fit_forest"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    test_emb = gsage.embed(model, test_samples)
    pred = forest.predict(test_emb)
    timing["test"] = time.perf_counter() - t0

    counts = confusion(pred, test_samples.labels, experiment.positive_labels, experiment.benign_label)
    return RunResult(
        seed=seed, metrics=Metrics.from_counts(counts), counts=counts,
        class_confusion=class_confusion(pred, test_samples.labels, num_classes),
        history=history, model=model, forest=forest, test_embeddings=test_emb,
        test_samples=test_samples, predictions=pred,
        empty_mapping_rate=(train_samples.empty_mapping_rate * len(train_samples)
                            + test_samples.empty_mapping_rate * len(test_samples)) / len(flows),
        timing=timing,
    )


def run_experiment(sag: StaticAttackGraph, flows: FlowDataset, experiment: ExperimentConfig | None = None,
                   gsage_config: GsageConfig | None = None, forest_config: ForestConfig | None = None,
                   ) -> ExperimentResult:
    experiment = experiment or ExperimentConfig()
    gsage_config = gsage_config or GsageConfig()
    forest_config = forest_config or ForestConfig()
    runs = []
    for r in range(experiment.repeats):
        seed = experiment.base_seed + r
        runs.append(run_once(sag, flows, seed, experiment, gsage_config, forest_config))
        log.info("run %d (seed %d): %s", r, seed, runs[-1].metrics.as_floats())
    return ExperimentResult(MetricsReport.from_runs([r.metrics for r in runs]), runs)


def rate_sweep(sag: StaticAttackGraph, flows: FlowDataset, rates: Iterable[float] | None = None,
               experiment: ExperimentConfig | None = None, gsage_config: GsageConfig | None = None,
               forest_config: ForestConfig | None = None) -> list[tuple[float, ExperimentResult]]:
    experiment = experiment or ExperimentConfig()
    rows = []
    for rate in (experiment.rates if rates is None else rates):
        sub = rate_sample(flows, rate, experiment.base_seed)
        rows.append((float(rate), run_experiment(sag, sub, experiment, gsage_config, forest_config)))
    return rows


SWEEP_COLUMNS = ("rate", "accuracy", "recall", "precision", "f1")


def sweep_csv(rows: Sequence[tuple[float, ExperimentResult]]) -> str:
    def fmt(v):
        return "" if v is None else repr(v)

    lines = [",".join(SWEEP_COLUMNS)]
    for rate, result in rows:
        m = result.report.mean
        lines.append(",".join([repr(rate)] + [fmt(m[k]) for k in SWEEP_COLUMNS[1:]]))
    return "\n".join(lines) + "\n"


@dataclass
class TimingResult:
    seconds: float
    runs: list[float]
    predictions: np.ndarray
    construction_seconds: float | None = None


def measure_test_time(model: GsageModel, forest: RandomForest, samples: SampleSet, repeats: int = 5,
                      construction_seconds: float | None = None) -> TimingResult:
    """Median wall-clock of embed + forest predict over pre-built samples.

    Sample construction is outside the clock; its cost, if measured by the
    caller, is carried through in ``construction_seconds``.
    """
    times, pred = [], None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = forest.predict(gsage.embed(model, samples))
        times.append(time.perf_counter() - t0)
        if pred is not None and not np.array_equal(pred, out):
            raise RuntimeError("prediction changed between timing runs")
        pred = out
    return TimingResult(statistics.median(times), times, pred, construction_seconds)
