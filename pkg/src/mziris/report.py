"""Static plots and the summary table rendered from stored run artifacts."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def load_metrics_logs(run_dirs: Sequence[Path]) -> list[list[dict]]:
    logs = []
    for run_dir in run_dirs:
        path = Path(run_dir) / "metrics.jsonl"
        lines = path.read_text(encoding="utf-8").splitlines()
        logs.append([json.loads(line) for line in lines if line.strip()])
    return logs


def _mean_std_curves(logs: Sequence[Sequence[dict]], key: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_epochs = min(len(log) for log in logs)
    values = np.array(
        [[log[e][key] for e in range(n_epochs)] for log in logs], dtype=np.float64
    )
    epochs = np.arange(1, n_epochs + 1)
    return epochs, values.mean(axis=0), values.std(axis=0)


def _curve_plot(logs: Sequence[Sequence[dict]], keys: dict[str, str], ylabel: str, out: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, label in keys.items():
        if any(log and log[0].get(key) is None for log in logs):
            continue
        epochs, mean, std = _mean_std_curves(logs, key)
        ax.plot(epochs, mean, marker="o", markersize=3, label=label)
        ax.fill_between(epochs, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("Epoch")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def plot_accuracy_curves(logs: Sequence[Sequence[dict]], out: Path) -> None:
    _curve_plot(logs, {"train_acc": "train", "val_acc": "validation"}, "Accuracy", out)


def plot_loss_curves(logs: Sequence[Sequence[dict]], out: Path) -> None:
    _curve_plot(logs, {"train_loss": "train", "val_loss": "validation"}, "Loss", out)


def plot_dilation_bars(bins: Sequence[dict], out: Path) -> None:
    """Grouped FP/FN rate bars per pupil-iris ratio-difference bin."""
    centers = np.arange(len(bins))
    labels = [f"{b['lo']:.3f}–{b['hi']:.3f}" for b in bins]
    fp = [b["fp_rate"] if b["fp_rate"] is not None else np.nan for b in bins]
    fn = [b["fn_rate"] if b["fn_rate"] is not None else np.nan for b in bins]
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.38
    ax.bar(centers - width / 2, fp, width, label="FP rate (NMZ pairs)")
    ax.bar(centers + width / 2, fn, width, label="FN rate (MZ pairs)")
    ax.set_xticks(centers)
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_xlabel("Pupil-iris ratio difference")
    ax.set_ylabel("Error rate")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def render_summary_table(aggregate: dict, out: Path) -> None:
    """Markdown mean-and-std table whose values round-trip the aggregate JSON.

    Cells carry full repr precision so that parsing a cell back with float()
    recovers the stored value bit-exactly.
    """
    lines = [
        f"# Test summary ({aggregate.get('variant', 'unknown')} input, "
        f"{aggregate.get('completed_runs', '?')} runs)",
        "",
        "| Metric | Mean ± Std |",
        "| --- | --- |",
    ]
    metrics = aggregate.get("metrics") or {}
    for key, entry in metrics.items():
        if entry["mean"] is None:
            cell = "n/a"
        else:
            cell = f"{entry['mean']!r} ± {entry['std']!r}"
        lines.append(f"| {key} | {cell} |")
    tmp = out.with_name(out.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    os.replace(tmp, out)


def parse_summary_table(path: Path) -> dict[str, tuple[float, float] | None]:
    """Inverse of render_summary_table, for verification and tooling."""
    out: dict[str, tuple[float, float] | None] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.startswith("|") or line.startswith("| ---") or line.startswith("| Metric"):
            continue
        _, metric, cell, _ = (part.strip() for part in line.split("|"))
        if cell == "n/a":
            out[metric] = None
        else:
            mean_s, std_s = cell.split("±")
            out[metric] = (float(mean_s), float(std_s))
    return out
