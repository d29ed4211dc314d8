"""Flow-feature CSV ingestion, cleaning, min-max scaling and sampling.

Column names follow CIC-IDS-2017 (``Source IP``, ``Destination IP``, ...),
matched case-insensitively after trimming. Every other column whose cells are
mostly numeric becomes a dynamic feature, in header order.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = {
    "src_ip": "source ip",
    "dst_ip": "destination ip",
    "src_port": "source port",
    "dst_port": "destination port",
    "protocol": "protocol",
    "timestamp": "timestamp",
    "label": "label",
}
BENIGN_LABEL = "BENIGN"
DEFAULT_EXCLUDED = ("Infiltration", "Heartbleed")
DEFAULT_ATTACK_CAP = 1000
DEFAULT_BENIGN_CAP = 9000
DEFAULT_RATES = (0.1, 0.2, 0.4, 0.6, 0.8, 1.0)
_NON_FINITE = ("nan", "inf", "+inf", "-inf", "infinity", "+infinity", "-infinity")
_TIME_FORMATS = ("%d/%m/%Y %H:%M:%S", "%d/%m/%Y %H:%M", "%d/%m/%Y %I:%M:%S %p", "%d/%m/%Y %I:%M %p")


class TrafficError(ValueError):
    pass


@dataclass(frozen=True)
class FlowRecord:
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: int
    timestamp: float
    features: np.ndarray
    label: int
    record_id: int = -1


@dataclass(frozen=True, eq=False)
class FlowDataset:
    """Column-oriented flow table; ``dataset[i]`` yields a :class:`FlowRecord`.

    ``record_ids`` are the 0-based data-row positions in the source file and
    survive every filtering/sampling step.
    """

    src_ip: np.ndarray
    dst_ip: np.ndarray
    src_port: np.ndarray
    dst_port: np.ndarray
    protocol: np.ndarray
    timestamp: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    record_ids: np.ndarray
    class_names: dict[int, str]
    feature_names: tuple[str, ...]
    dropped: int = 0

    def __post_init__(self):
        unknown = set(np.unique(self.labels).tolist()) - set(self.class_names)
        if unknown:
            raise TrafficError(f"labels {sorted(unknown)} missing from class_names")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> FlowRecord:
        return FlowRecord(
            str(self.src_ip[i]), str(self.dst_ip[i]), int(self.src_port[i]), int(self.dst_port[i]),
            int(self.protocol[i]), float(self.timestamp[i]), self.features[i], int(self.labels[i]),
            int(self.record_ids[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def K(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "FlowDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            src_ip=self.src_ip[idx], dst_ip=self.dst_ip[idx], src_port=self.src_port[idx],
            dst_port=self.dst_port[idx], protocol=self.protocol[idx], timestamp=self.timestamp[idx],
            features=self.features[idx], labels=self.labels[idx], record_ids=self.record_ids[idx],
        )

    def with_features(self, features: np.ndarray) -> "FlowDataset":
        return replace(self, features=features)

    def class_counts(self) -> dict[int, int]:
        ids, counts = np.unique(self.labels, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}


@dataclass(frozen=True)
class NormalizationParams:
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        if np.any(self.minimum > self.maximum):
            raise TrafficError("normalization minimum exceeds maximum")


def parse_timestamp(text: str) -> float | None:
    """Seconds since the epoch for CIC-IDS-2017 ``d/M/yyyy H:m[:s]`` stamps (UTC)."""
    text = str(text).strip()
    for fmt in _TIME_FORMATS:
        try:
            return datetime.strptime(text, fmt).replace(tzinfo=timezone.utc).timestamp()
        except ValueError:
            continue
    return None


def build_label_map(labels: Iterable[str], benign: str = BENIGN_LABEL) -> dict[str, int]:
    """Benign gets 0; other labels are numbered in sorted order."""
    names = sorted({str(x).strip() for x in labels} - {benign})
    return {benign: 0, **{name: i + 1 for i, name in enumerate(names)}}


def parse_flow_csv(
    text: str,
    label_map: Mapping[str, int] | None = None,
    benign_label: str = BENIGN_LABEL,
) -> FlowDataset:
    """Parse and clean a CIC-IDS-2017-style flow CSV.

    Rows with any missing, non-numeric or non-finite feature cell are dropped;
    the count is kept in ``dataset.dropped``. Labels absent from an explicit
    ``label_map`` are rejected.
    """
    if not text.strip():
        raise TrafficError("empty file")
    frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False, skipinitialspace=True)
    return _frame_to_dataset(frame, label_map, benign_label)


def load_flow_csv(path, label_map=None, benign_label: str = BENIGN_LABEL) -> FlowDataset:
    with open(path, encoding="utf-8", errors="replace") as fh:
        return parse_flow_csv(fh.read(), label_map, benign_label)


def _frame_to_dataset(frame: pd.DataFrame, label_map, benign_label) -> FlowDataset:
    norm = [str(c).strip().lower() for c in frame.columns]
    where: dict[str, int] = {}
    for key, name in REQUIRED_COLUMNS.items():
        if name not in norm:
            raise TrafficError(f"missing required column {name!r}")
        where[key] = norm.index(name)
    required_pos = set(where.values())
    n_rows = len(frame)
    if n_rows == 0:
        raise TrafficError("no rows survive cleaning")

    feature_pos, feature_cols = [], []
    for pos in range(len(frame.columns)):
        if pos in required_pos:
            continue
        col = frame.iloc[:, pos].str.strip()
        values = pd.to_numeric(col, errors="coerce")
        filled = col != ""
        numeric_like = values.notna() | col.str.lower().isin(_NON_FINITE)
        # text columns such as Flow ID are skipped; a few bad cells only drop rows
        if (filled & ~numeric_like).sum() * 2 < max(filled.sum(), 1):
            feature_pos.append(pos)
            feature_cols.append(values.to_numpy(dtype=float))
    if not feature_pos:
        raise TrafficError("no numeric feature columns")
    features = np.column_stack(feature_cols)

    ports = [pd.to_numeric(frame.iloc[:, where[k]].str.strip(), errors="coerce").to_numpy(dtype=float)
             for k in ("src_port", "dst_port", "protocol")]
    keep = np.isfinite(features).all(axis=1)
    for arr in ports:
        keep &= np.isfinite(arr)
    dropped = int(n_rows - keep.sum())
    if not keep.any():
        raise TrafficError("no rows survive cleaning")
    if dropped:
        log.info("dropped %d of %d rows with missing or non-numeric values", dropped, n_rows)

    raw_labels = frame.iloc[:, where["label"]].str.strip().to_numpy()[keep]
    if label_map is None:
        label_map = build_label_map(raw_labels, benign_label)
    unknown = sorted(set(raw_labels) - set(label_map))
    if unknown:
        raise TrafficError(f"labels not in label map: {unknown}")
    labels = np.array([label_map[x] for x in raw_labels], dtype=np.int64)
    class_names = {int(v): k for k, v in label_map.items()}

    stamps = [parse_timestamp(x) for x in frame.iloc[:, where["timestamp"]].to_numpy()[keep]]
    if any(s is None for s in stamps):
        log.warning("unparseable timestamps; falling back to row index as clock")
        timestamp = np.arange(n_rows, dtype=float)[keep]
    else:
        timestamp = np.array(stamps, dtype=float)

    return FlowDataset(
        src_ip=frame.iloc[:, where["src_ip"]].str.strip().to_numpy()[keep].astype(str),
        dst_ip=frame.iloc[:, where["dst_ip"]].str.strip().to_numpy()[keep].astype(str),
        src_port=ports[0][keep].astype(np.int64),
        dst_port=ports[1][keep].astype(np.int64),
        protocol=ports[2][keep].astype(np.int64),
        timestamp=timestamp,
        features=features[keep],
        labels=labels,
        record_ids=np.flatnonzero(keep).astype(np.int64),
        class_names=class_names,
        feature_names=tuple(str(frame.columns[p]).strip() for p in feature_pos),
        dropped=dropped,
    )


def write_flow_csv(dataset: FlowDataset, path) -> None:
    """Re-emit a dataset with a CIC-compatible header (timestamps as epoch seconds)."""
    frame = pd.DataFrame({
        "Source IP": dataset.src_ip, "Source Port": dataset.src_port,
        "Destination IP": dataset.dst_ip, "Destination Port": dataset.dst_port,
        "Protocol": dataset.protocol,
        "Timestamp": [datetime.fromtimestamp(t, timezone.utc).strftime("%d/%m/%Y %H:%M:%S")
                      for t in dataset.timestamp],
    })
    for k, name in enumerate(dataset.feature_names):
        frame[name] = dataset.features[:, k]
    frame["Label"] = [dataset.class_names[int(c)] for c in dataset.labels]
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def fit_minmax(dataset: FlowDataset) -> NormalizationParams:
    if len(dataset) == 0:
        raise TrafficError("cannot fit normalization on an empty dataset")
    return NormalizationParams(dataset.features.min(axis=0), dataset.features.max(axis=0))


def apply_minmax(dataset: FlowDataset, params: NormalizationParams) -> FlowDataset:
    span = params.maximum - params.minimum
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (dataset.features - params.minimum) / safe, 0.0)
    return dataset.with_features(np.clip(scaled, 0.0, 1.0))


def _label_id(dataset: FlowDataset, name_or_id) -> int | None:
    if isinstance(name_or_id, (int, np.integer)):
        return int(name_or_id)
    for cid, name in dataset.class_names.items():
        if name.lower() == str(name_or_id).strip().lower():
            return cid
    return None


def stratified_cap_sample(
    dataset: FlowDataset,
    caps: Mapping[int, int],
    seed: int,
    exclude: Iterable = (),
) -> FlowDataset:
    """Draw ``min(cap, available)`` records per class without replacement.

    ``exclude`` lists class ids or names to drop entirely. Selected records
    keep their original relative order.
    """
    rng = np.random.default_rng(seed)
    excluded = {_label_id(dataset, x) for x in exclude} - {None}
    chosen = []
    for cid in sorted(dataset.class_counts()):
        if cid in excluded:
            continue
        if cid not in caps:
            raise TrafficError(f"no cap configured for class {cid} ({dataset.class_names[cid]})")
        members = np.flatnonzero(dataset.labels == cid)
        cap = caps[cid]
        if len(members) < cap:
            log.warning("class %s has %d records, below cap %d; keeping all",
                        dataset.class_names[cid], len(members), cap)
        chosen.append(rng.choice(members, size=min(cap, len(members)), replace=False))
    idx = np.sort(np.concatenate(chosen)) if chosen else np.array([], dtype=np.int64)
    return dataset.subset(idx)


def default_caps(dataset: FlowDataset, attack_cap: int = DEFAULT_ATTACK_CAP,
                 benign_cap: int = DEFAULT_BENIGN_CAP, benign_id: int = 0) -> dict[int, int]:
    return {cid: benign_cap if cid == benign_id else attack_cap for cid in dataset.class_names}


def rate_sample(dataset: FlowDataset, rate: float, seed: int) -> FlowDataset:
    """Keep ``ceil(rate * class size)`` records per class, original order preserved."""
    if not 0.0 < rate <= 1.0:
        raise TrafficError(f"rate must be in (0, 1], got {rate}")
    if rate == 1.0:
        return dataset
    rng = np.random.default_rng(seed)
    chosen = []
    for cid in sorted(dataset.class_counts()):
        members = np.flatnonzero(dataset.labels == cid)
        take = math.ceil(rate * len(members) - 1e-9)
        chosen.append(rng.choice(members, size=take, replace=False))
    return dataset.subset(np.sort(np.concatenate(chosen)))


AGGREGATORS = {"mean": np.mean, "sum": np.sum, "max": np.max}


def window_aggregate(records: Iterable[FlowRecord] | FlowDataset, t1: float, t2: float,
                     agg: str = "mean") -> np.ndarray:
    """Per-coordinate aggregate of the feature vectors with timestamp in ``[t1, t2]``."""
    if t1 > t2:
        raise TrafficError("window start after window end")
    if agg not in AGGREGATORS:
        raise TrafficError(f"unknown aggregator {agg!r}")
    if isinstance(records, FlowDataset):
        stamps, feats = records.timestamp, records.features
    else:
        records = list(records)
        stamps = np.array([r.timestamp for r in records], dtype=float)
        feats = np.array([r.features for r in records], dtype=float)
    mask = (stamps >= t1) & (stamps <= t2) if len(stamps) else np.zeros(0, bool)
    if not mask.any():
        raise TrafficError("no data in window")
    return AGGREGATORS[agg](feats[mask], axis=0)


def aggregate_windows(dataset: FlowDataset, window: float, agg: str = "mean") -> FlowDataset:
    """Replace each flow's vector with the aggregate over the same endpoint pair.

    The window for a flow at time ``t`` is ``[t - window, t]``; flows share an
    action when source IP, destination IP, destination port and protocol agree.
    """
    out = np.empty_like(dataset.features)
    keys = list(zip(dataset.src_ip, dataset.dst_ip, dataset.dst_port, dataset.protocol))
    groups: dict[tuple, list[int]] = {}
    for i, key in enumerate(keys):
        groups.setdefault(key, []).append(i)
    for members in groups.values():
        members = np.array(members)
        stamps = dataset.timestamp[members]
        feats = dataset.features[members]
        for j, i in enumerate(members):
            mask = (stamps >= stamps[j] - window) & (stamps <= stamps[j])
            out[i] = AGGREGATORS[agg](feats[mask], axis=0)
    return dataset.with_features(out)
