"""``gnn-nad`` command line: encode, synth, run, sweep, time.

Exit status: 0 success, 1 input error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from . import gsage, plotting
from .evaluation import (ExperimentConfig, measure_test_time, rate_sweep, run_experiment, split_train_test,
                         sweep_csv)
from .forest import ForestConfig, RandomForest, fit_forest
from .fusion import build_dataset
from .graph_model import AttackGraphError, encode_attack_graph, load_attack_graph
from .gsage import GsageConfig, GsageModel
from .synth import write_fixture
from .traffic import (BENIGN_LABEL, DEFAULT_ATTACK_CAP, DEFAULT_BENIGN_CAP, DEFAULT_EXCLUDED, TrafficError,
                      aggregate_windows, apply_minmax, fit_minmax, load_flow_csv, stratified_cap_sample)

log = logging.getLogger("gnnnad")


class InputError(Exception):
    """Bad user input: missing files, invalid config, malformed data."""


INPUT_ERRORS = (InputError, AttackGraphError, TrafficError, FileNotFoundError)


class StageError(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class PipelineConfig:
    vertices: Path | None = None
    arcs: Path | None = None
    flows: Path | None = None
    out: Path = Path("results")
    reverse_arcs: bool = False
    benign_label: str = BENIGN_LABEL
    label_map: dict[str, int] | None = None
    attack_cap: int = DEFAULT_ATTACK_CAP
    benign_cap: int = DEFAULT_BENIGN_CAP
    caps: dict[str, int] = field(default_factory=dict)
    exclude: list[str] = field(default_factory=lambda: list(DEFAULT_EXCLUDED))
    sample: bool = True
    window: float | None = None
    agg: str = "mean"
    gsage: GsageConfig = field(default_factory=GsageConfig)
    forest: ForestConfig = field(default_factory=ForestConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def echo(self) -> dict:
        return {
            "vertices": str(self.vertices), "arcs": str(self.arcs), "flows": str(self.flows),
            "reverse_arcs": self.reverse_arcs, "benign_label": self.benign_label, "label_map": self.label_map,
            "attack_cap": self.attack_cap, "benign_cap": self.benign_cap, "caps": self.caps,
            "exclude": self.exclude, "sample": self.sample, "window": self.window, "agg": self.agg,
            "gsage": self.gsage.to_dict(), "forest": self.forest.to_dict(),
            "experiment": self.experiment.to_dict(),
        }


_SECTION_TYPES = {"gsage": GsageConfig, "forest": ForestConfig, "experiment": ExperimentConfig}


def load_config(path: str | None, args: argparse.Namespace) -> PipelineConfig:
    """Merge defaults < config file < command-line flags and check referenced paths."""
    raw: dict = {}
    base = Path.cwd()
    if path:
        cfg_path = Path(path)
        if not cfg_path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            raw = json.loads(cfg_path.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from None
        base = cfg_path.parent
    sections = {name: dict(raw.pop(name, {}) or {}) for name in _SECTION_TYPES}
    seed = raw.pop("seed", None)

    flag_map = {
        "gsage": {"epochs": "epochs", "batch_size": "batch_size", "dropout_p": "dropout", "hidden_units": "hidden",
                  "layer_count": "layers", "neighbor_pool": "neighbor_pool", "graph_pool": "graph_pool",
                  "learning_rate": "lr"},
        "forest": {"tree_count": "trees", "max_depth": "max_depth"},
        "experiment": {"repeats": "repeats", "train_fraction": "train_fraction", "rates": "rates"},
    }
    for section, mapping in flag_map.items():
        for key, attr in mapping.items():
            value = getattr(args, attr, None)
            if value is not None:
                sections[section][key] = value
    for key in ("attack_cap", "benign_cap", "window", "agg", "exclude"):
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    if getattr(args, "no_sample", False):
        raw["sample"] = False
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    if seed is not None:
        sections["experiment"]["base_seed"] = seed

    try:
        typed = {name: cls(**sections[name]) for name, cls in _SECTION_TYPES.items()}
        cfg = PipelineConfig(**raw, **typed)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid configuration: {exc}") from None
    for key in ("vertices", "arcs", "flows"):
        flag = getattr(args, key, None)
        if flag:
            setattr(cfg, key, Path(flag))
        elif getattr(cfg, key) is not None:
            setattr(cfg, key, base / getattr(cfg, key))
    out = getattr(args, "out", None)
    cfg.out = Path(out) if out else base / cfg.out
    if cfg.agg not in ("mean", "sum", "max"):
        raise InputError(f"unknown aggregator {cfg.agg!r}")
    return cfg


def _require(cfg: PipelineConfig, *keys: str) -> None:
    for key in keys:
        value = getattr(cfg, key)
        if value is None:
            raise InputError(f"missing path: {key}")
        if not Path(value).is_file():
            raise InputError(f"{key} file not found: {value}")


def prepare_inputs(cfg: PipelineConfig):
    """Load and encode the graph; load, cap-sample and optionally window the flows.

    Returns ``(sag, flows, construction_seconds)``.
    """
    _require(cfg, "vertices", "arcs", "flows")
    t0 = time.perf_counter()
    with stage("encode"):
        graph = load_attack_graph(cfg.vertices, cfg.arcs, cfg.reverse_arcs)
        sag = encode_attack_graph(graph)
    construction = time.perf_counter() - t0
    with stage("ingest"):
        flows = load_flow_csv(cfg.flows, cfg.label_map, cfg.benign_label)
    log.info("loaded %d flows (%d dropped), K=%d, classes %s", len(flows), flows.dropped, flows.K,
             flows.class_names)
    with stage("sample"):
        flows = _sample(cfg, flows)
    return sag, flows, construction


def _sample(cfg: PipelineConfig, flows):
    if cfg.sample:
        by_name = {name.lower(): cap for name, cap in cfg.caps.items()}
        caps = {cid: by_name.get(name.lower(), cfg.benign_cap if cid == 0 else cfg.attack_cap)
                for cid, name in flows.class_names.items()}
        flows = stratified_cap_sample(flows, caps, cfg.experiment.base_seed, cfg.exclude)
        log.info("per-class counts after sampling: %s", flows.class_counts())
    if cfg.window:
        flows = aggregate_windows(flows, cfg.window, cfg.agg)
    return flows


def _prepare_out(cfg: PipelineConfig) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "figures").mkdir(exist_ok=True)
    return cfg.out


def _dataset_summary(sag, flows) -> dict:
    return {"flows": len(flows), "dropped": flows.dropped, "K": flows.K, "n": sag.n, "D": sag.D,
            "class_counts": {flows.class_names[c]: k for c, k in flows.class_counts().items()}}


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- subcommands -----------------------------------------------------------------

def cmd_encode(args) -> int:
    for key in ("vertices", "arcs"):
        if not args.__dict__[key] or not Path(args.__dict__[key]).is_file():
            raise InputError(f"{key} file not found: {args.__dict__[key]}")
    graph = load_attack_graph(args.vertices, args.arcs, args.reverse_arcs)
    sag = encode_attack_graph(graph)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "nodes": [{"id": v.id, "statement": v.statement, "kind": v.kind, "metric": v.metric} for v in graph.nodes],
        "edges": [list(e) for e in graph.edges],
        "vocabulary": list(sag.vocabulary.tokens),
        "features": sag.features.astype(int).tolist(),
    }
    _write_json(out / "sag.json", doc)
    if args.dot:
        Path(args.dot).write_text(graph.to_dot())
    print(f"n={sag.n} edges={len(graph.edges)} D={sag.D}")
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out or "synth")
    info = write_fixture(out, seed=args.seed or 0, per_class=args.per_class)
    graph = info["graph"]
    print(f"wrote {out}: {graph.n} nodes, {len(graph.edges)} edges, {2 * args.per_class} flows")
    return 0


def _report_figures(out: Path, result) -> None:
    doc = result.to_json()
    plotting.plot_training_history([r["train_loss"] for r in doc["runs"]], out / "figures" / "training_loss.png")
    plotting.plot_run_metrics([r["metrics"] for r in doc["runs"]], out / "figures" / "run_metrics.png")


def _write_sweep(out: Path, rows) -> None:
    (out / "sweep.csv").write_text(sweep_csv(rows))
    plotting.plot_rate_sweep([(rate, res.report.mean) for rate, res in rows], out / "figures" / "rate_sweep.png")


def cmd_run(args) -> int:
    cfg = load_config(args.config, args)
    sag, flows, _ = prepare_inputs(cfg)
    out = _prepare_out(cfg)
    with stage("experiment"):
        result = run_experiment(sag, flows, cfg.experiment, cfg.gsage, cfg.forest)
    doc = result.to_json(cfg.echo())
    doc["dataset"] = _dataset_summary(sag, flows)
    _write_json(out / "report.json", doc)
    first = result.runs[0]
    first.model.save(out / "model.ckpt")
    (out / "forest.txt").write_text(first.forest.dumps())
    gsage.write_embeddings(out / "embeddings.csv", first.test_embeddings, first.test_samples.labels,
                           first.test_samples.flow_ids)
    _report_figures(out, result)
    if args.rates is not None:
        with stage("sweep"):
            _write_sweep(out, rate_sweep(sag, flows, cfg.experiment.rates, cfg.experiment, cfg.gsage, cfg.forest))
    m = result.report.mean
    print("mean " + " ".join(f"{k}={'undefined' if v is None else f'{v:.4f}'}" for k, v in m.items()))
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args)
    sag, flows, _ = prepare_inputs(cfg)
    out = _prepare_out(cfg)
    with stage("sweep"):
        rows = rate_sweep(sag, flows, cfg.experiment.rates, cfg.experiment, cfg.gsage, cfg.forest)
    _write_sweep(out, rows)
    _write_json(out / "sweep.json", {
        "config": cfg.echo(),
        "dataset": _dataset_summary(sag, flows),
        "rows": [{"rate": rate, "test_size": len(res.runs[0].predictions),
                  **res.to_json()} for rate, res in rows],
    })
    print(sweep_csv(rows), end="")
    return 0


def cmd_time(args) -> int:
    cfg = load_config(args.config, args)
    for key in ("checkpoint", "forest"):
        path = getattr(args, key)
        if path and not Path(path).is_file():
            raise InputError(f"{key} file not found: {path}")
    sag, flows, graph_seconds = prepare_inputs(cfg)
    out = _prepare_out(cfg)
    seed = cfg.experiment.base_seed
    train_idx, test_idx = split_train_test(flows.labels, cfg.experiment.train_fraction, seed)
    params = fit_minmax(flows.subset(train_idx))
    t0 = time.perf_counter()
    test_samples = build_dataset(sag, apply_minmax(flows.subset(test_idx), params))
    fuse_seconds = time.perf_counter() - t0

    if args.checkpoint and args.forest:
        model = GsageModel.load(args.checkpoint, expect_width=test_samples.width)
        forest = RandomForest.loads(Path(args.forest).read_text())
    else:
        train_samples = build_dataset(sag, apply_minmax(flows.subset(train_idx), params))
        gcfg = GsageConfig(**{**cfg.gsage.to_dict(), "seed": seed})
        model = GsageModel.for_samples(sag.graph.adjacency(), train_samples, max(flows.class_names) + 1, gcfg)
        model, _ = gsage.train(model, train_samples, gcfg)
        forest = fit_forest(gsage.embed(model, train_samples), train_samples.labels,
                            ForestConfig(**{**cfg.forest.to_dict(), "seed": seed}))
    timing = measure_test_time(model, forest, test_samples, repeats=5,
                               construction_seconds=graph_seconds + fuse_seconds)
    doc = {
        "test_samples": len(test_samples),
        "test_seconds_median": timing.seconds,
        "test_seconds_runs": timing.runs,
        "construction_seconds": timing.construction_seconds,
        "construction_breakdown": {"attack_graph_encode": graph_seconds, "fuse_test_samples": fuse_seconds},
    }
    _write_json(out / "timing.json", doc)
    plotting.plot_timing(["construction", "test (median)"], [timing.construction_seconds, timing.seconds],
                         out / "figures" / "timing.png")
    print(f"test time (embed+predict, median of 5) {timing.seconds:.4f}s over {len(test_samples)} samples; "
          f"construction {timing.construction_seconds:.4f}s (excluded)")
    return 0


# -- argument parsing ------------------------------------------------------------

def _rates(text: str) -> tuple[float, ...]:
    try:
        rates = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rate list {text!r}") from None
    if not rates or any(not 0 < r <= 1 for r in rates):
        raise argparse.ArgumentTypeError("rates must lie in (0, 1]")
    return rates


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON pipeline configuration; flags override its values")
    p.add_argument("--seed", type=int, help="base seed; run r uses seed+r (default: 0)")
    p.add_argument("--out", help="output directory (default: results/ next to the config)")


def _add_pipeline(p: argparse.ArgumentParser) -> None:
    p.add_argument("--vertices", help="MulVAL VERTICES.CSV")
    p.add_argument("--arcs", help="MulVAL ARCS.CSV")
    p.add_argument("--flows", help="CIC-IDS-2017-style flow CSV")
    g = p.add_argument_group("GSAGE")
    g.add_argument("--epochs", type=int, help="training epochs (default: 100)")
    g.add_argument("--batch-size", type=int, help="mini-batch size (default: 32)")
    g.add_argument("--dropout", type=float, help="dropout probability (default: 0.2)")
    g.add_argument("--hidden", type=int, help="hidden units per SC layer (default: 256)")
    g.add_argument("--layers", type=int, help="number of SC layers (default: 3)")
    g.add_argument("--neighbor-pool", choices=("sum", "mean"), help="neighbour aggregation (default: sum)")
    g.add_argument("--graph-pool", choices=("mean", "sum"),
                   help="graph-level pooling over nodes (default: mean)")
    g.add_argument("--lr", type=float, help="Adam learning rate (default: 0.001)")
    f = p.add_argument_group("random forest")
    f.add_argument("--trees", type=int, help="tree count (default: 100)")
    f.add_argument("--max-depth", type=int, help="maximum tree depth (default: unlimited)")
    e = p.add_argument_group("protocol")
    e.add_argument("--repeats", type=int, help="repeated runs with seeds base..base+repeats-1 (default: 10)")
    e.add_argument("--train-fraction", type=float, help="stratified train share (default: 0.8)")
    e.add_argument("--rates", type=_rates, help="comma-separated sampling rates (default: 0.1,0.2,0.4,0.6,0.8,1.0)")
    e.add_argument("--attack-cap", type=int, help="records kept per attack class (default: 1000)")
    e.add_argument("--benign-cap", type=int, help="benign records kept (default: 9000)")
    e.add_argument("--exclude", type=lambda s: [x.strip() for x in s.split(",") if x.strip()],
                   help="comma-separated labels dropped entirely (default: Infiltration,Heartbleed)")
    e.add_argument("--no-sample", action="store_true", help="skip per-class cap sampling")
    e.add_argument("--window", type=float, help="aggregate each flow over this many preceding seconds (default: off)")
    e.add_argument("--agg", choices=("mean", "sum", "max"), help="window aggregator (default: mean)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gnn-nad", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="parse and encode an attack graph")
    _add_common(p)
    p.add_argument("--vertices", required=True, help="MulVAL VERTICES.CSV")
    p.add_argument("--arcs", required=True, help="MulVAL ARCS.CSV")
    p.add_argument("--reverse-arcs", action="store_true", help="arc rows are dst,src")
    p.add_argument("--dot", help="also write a Graphviz DOT file")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("synth", help="write the synthetic attack graph and flow CSV")
    _add_common(p)
    p.add_argument("--per-class", type=int, default=1000, help="flows per class (default: 1000)")
    p.set_defaults(func=cmd_synth)

    for name, func, text in (("run", cmd_run, "repeated GSAGE+RF experiment"),
                             ("sweep", cmd_sweep, "sampling-rate sweep"),
                             ("time", cmd_time, "test-time measurement on pre-built samples")):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        _add_pipeline(p)
        if name == "time":
            p.add_argument("--checkpoint", help="trained GSAGE checkpoint (with --forest skips training)")
            p.add_argument("--forest", help="serialised forest from a previous run")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"gnn-nad {args.command}: input error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        kind = "input" if isinstance(exc.cause, INPUT_ERRORS) else "internal"
        print(f"gnn-nad {args.command}: {kind} error in stage {exc}", file=sys.stderr)
        return 1 if kind == "input" else 2
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"gnn-nad {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
