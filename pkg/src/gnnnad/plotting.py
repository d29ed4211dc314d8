"""Report figures written next to the JSON/CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

METRIC_KEYS = ("accuracy", "recall", "precision", "f1")


def _finish(fig, ax, path) -> Path:
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_training_history(losses: list[list[float]], path) -> Path:
    """Per-epoch training loss, one line per run."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for r, loss in enumerate(losses):
        ax.plot(range(1, len(loss) + 1), loss, lw=1, label=f"run {r}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    if 1 < len(losses) <= 10:
        ax.legend(fontsize=7, frameon=False)
    return _finish(fig, ax, path)


def plot_run_metrics(runs: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    width = 0.8 / len(METRIC_KEYS)
    for k, key in enumerate(METRIC_KEYS):
        vals = [r[key] if r[key] is not None else 0.0 for r in runs]
        ax.bar([i + k * width for i in range(len(runs))], vals, width, label=key)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(runs))])
    ax.set_xticklabels([str(i) for i in range(len(runs))])
    ax.set_xlabel("run")
    lo = min((r[k] for r in runs for k in METRIC_KEYS if r[k] is not None), default=0.0)
    ax.set_ylim(max(0.0, lo - 0.05), 1.005)
    ax.legend(fontsize=7, frameon=False, ncol=4, loc="lower center")
    return _finish(fig, ax, path)


def plot_rate_sweep(rows: list[tuple[float, dict]], path) -> Path:
    """Mean metrics against per-class sampling rate."""
    fig, ax = plt.subplots(figsize=(5, 3.2))
    rates = [r for r, _ in rows]
    for key in METRIC_KEYS:
        ax.plot(rates, [m[key] if m[key] is not None else float("nan") for _, m in rows], marker="o", label=key)
    ax.set_xlabel("sampling rate")
    ax.set_ylabel("score")
    ax.legend(fontsize=7, frameon=False)
    return _finish(fig, ax, path)


def plot_timing(labels: list[str], seconds: list[float], path) -> Path:
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(labels, seconds, color="0.4")
    for i, s in enumerate(seconds):
        ax.text(i, s, f"{s:.3f}s", ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("seconds")
    return _finish(fig, ax, path)
