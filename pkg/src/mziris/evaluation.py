"""Threshold classification, the metric suite, and the analysis harnesses.

Predictions use a distance threshold: a pair is called MZ when its embedding
distance falls strictly below tau (ties go to NMZ). Metrics with a zero
denominator are reported as None, never silently as 0.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .encoder import EncoderConfig, pair_distances
from .errors import EmptyResults, MissingGeometry
from .pairing import MZ, PairRecord
from .preprocess import InputVariant

DEFAULT_SWEEP_TAUS = (0.2, 0.4, 0.6, 0.8)


def classify(distance: float, tau: float = 0.5) -> str:
    """MZ iff distance < tau; the boundary itself is NMZ."""
    if distance < 0:
        raise ValueError(f"distance must be >= 0, got {distance}")
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    return "MZ" if distance < tau else "NMZ"


@dataclass
class PairResult:
    pair: PairRecord
    distance: float
    predicted: str
    ratio_a: float | None = None
    ratio_b: float | None = None


@dataclass
class MetricReport:
    accuracy: float
    precision: float | None
    recall: float | None
    f1: float | None
    avg_pos_dist: float | None
    avg_neg_dist: float | None
    counts: dict

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "avg_pos_dist": self.avg_pos_dist,
            "avg_neg_dist": self.avg_neg_dist,
            "counts": dict(self.counts),
        }


def _metrics_from_arrays(
    labels: np.ndarray, predicted_mz: np.ndarray, distances: np.ndarray
) -> MetricReport:
    is_mz = labels == MZ
    tp = int((is_mz & predicted_mz).sum())
    fn = int((is_mz & ~predicted_mz).sum())
    fp = int((~is_mz & predicted_mz).sum())
    tn = int((~is_mz & ~predicted_mz).sum())
    total = tp + fp + tn + fn

    def ratio(num: int, den: int) -> float | None:
        return num / den if den > 0 else None

    precision = ratio(tp, tp + fp)
    recall = ratio(tp, tp + fn)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    pos_d = distances[is_mz]
    neg_d = distances[~is_mz]
    return MetricReport(
        accuracy=(tp + tn) / total,
        precision=precision,
        recall=recall,
        f1=f1,
        avg_pos_dist=float(pos_d.mean()) if len(pos_d) else None,
        avg_neg_dist=float(neg_d.mean()) if len(neg_d) else None,
        counts={"TP": tp, "FP": fp, "TN": tn, "FN": fn},
    )


def compute_metrics(results: Sequence[PairResult]) -> MetricReport:
    """Confusion counts and the six summary metrics over pair results.

    Average distances are grouped by the true label, not the prediction.
    """
    if not results:
        raise EmptyResults("compute_metrics requires at least one result")
    labels = np.array([r.pair.label for r in results])
    predicted = np.array([r.predicted == "MZ" for r in results])
    distances = np.array([r.distance for r in results], dtype=np.float64)
    return _metrics_from_arrays(labels, predicted, distances)


def threshold_sweep(
    labeled_distances: Sequence[tuple[int, float]],
    taus: Sequence[float] = DEFAULT_SWEEP_TAUS,
) -> dict[float, MetricReport]:
    """Re-run the metric suite at each threshold on the same stored distances."""
    if not labeled_distances:
        raise EmptyResults("threshold_sweep requires at least one distance")
    labels = np.array([lab for lab, _ in labeled_distances])
    distances = np.array([d for _, d in labeled_distances], dtype=np.float64)
    out: dict[float, MetricReport] = {}
    for tau in taus:
        predicted = np.array([classify(d, tau) == "MZ" for d in distances])
        out[float(tau)] = _metrics_from_arrays(labels, predicted, distances)
    return out


def dilation_error_analysis(
    results: Sequence[PairResult], bins: Sequence[float] | None = None
) -> list[dict]:
    """Error rates bucketed by the pupil-iris ratio difference of each pair.

    FN rates are computed over true-MZ pairs per bin, FP rates over true-NMZ
    pairs; a bin with no denominator reports None. With ``bins`` unset, five
    equal-width bins span the observed difference range.
    """
    if not results:
        raise EmptyResults("dilation_error_analysis requires results")
    for r in results:
        if r.ratio_a is None or r.ratio_b is None:
            raise MissingGeometry(f"pair {r.pair.pair_id()} lacks pupil-iris ratios")
    rows = [(r.pair.label, r.predicted, r.ratio_a, r.ratio_b) for r in results]
    return dilation_bins_from_rows(rows, bins)


def dilation_bins_from_rows(
    rows: Sequence[tuple[int, str, float, float]], bins: Sequence[float] | None = None
) -> list[dict]:
    """Core binning on (label, predicted, ratio_a, ratio_b) tuples."""
    diffs = np.array([abs(ra - rb) for _, _, ra, rb in rows], dtype=np.float64)
    if bins is None:
        lo, hi = float(diffs.min()), float(diffs.max())
        if hi <= lo:
            hi = lo + 1e-9
        edges = np.linspace(lo, hi, 6)
    else:
        edges = np.asarray(bins, dtype=np.float64)
        if len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("bins must be at least two strictly increasing edges")
    # Clamp into the end bins so every pair is counted exactly once.
    idx = np.clip(np.digitize(diffs, edges[1:-1], right=False), 0, len(edges) - 2)

    out: list[dict] = []
    for b in range(len(edges) - 1):
        members = [row for row, k in zip(rows, idx) if k == b]
        n_mz = sum(1 for label, _, _, _ in members if label == MZ)
        n_nmz = len(members) - n_mz
        fn = sum(1 for label, pred, _, _ in members if label == MZ and pred == "NMZ")
        fp = sum(1 for label, pred, _, _ in members if label != MZ and pred == "MZ")
        out.append(
            {
                "lo": float(edges[b]),
                "hi": float(edges[b + 1]),
                "n_mz": n_mz,
                "n_nmz": n_nmz,
                "fn": fn,
                "fp": fp,
                "fn_rate": fn / n_mz if n_mz else None,
                "fp_rate": fp / n_nmz if n_nmz else None,
            }
        )
    return out


def evaluate_pairs(
    model: torch.nn.Module,
    encoder_cfg: EncoderConfig,
    pairs: Sequence[PairRecord],
    variant: InputVariant,
    tau: float = 0.5,
    ratios: dict[str, float] | None = None,
    batch_size: int = 32,
    allow_resize: bool = False,
) -> list[PairResult]:
    """Embed every pair with the shared encoder and classify by threshold."""
    from .trainer import pairs_to_tensors

    a, b, _ = pairs_to_tensors(pairs, variant, encoder_cfg.input_size, allow_resize)
    model.eval()
    dists: list[torch.Tensor] = []
    with torch.no_grad():
        for lo in range(0, len(pairs), batch_size):
            sl = slice(lo, lo + batch_size)
            dists.append(
                pair_distances(model(a[sl]), model(b[sl]), mode=encoder_cfg.distance_mode)
            )
    d_all = torch.cat(dists).numpy().astype(np.float64)

    out: list[PairResult] = []
    for pair, d in zip(pairs, d_all):
        ra = ratios.get(pair.a.path) if ratios else None
        rb = ratios.get(pair.b.path) if ratios else None
        out.append(PairResult(pair, float(d), classify(float(d), tau), ra, rb))
    return out


def ablation_backbones(
    depths: Sequence[int],
    train_pairs: Sequence[PairRecord],
    val_pairs: Sequence[PairRecord],
    test_pairs: Sequence[PairRecord],
    tc,
    oc,
    encoder_cfg: EncoderConfig,
    loss_cfg,
    out_dir: str | Path,
    run_seeds: Sequence[int] | None = None,
    allow_resize: bool = False,
) -> list[dict]:
    """Repeat the full experiment per backbone depth on identical data/seeds."""
    from dataclasses import replace

    from .trainer import run_experiment

    out_dir = Path(out_dir)
    rows: list[dict] = []
    for depth in depths:
        cfg = replace(encoder_cfg, backbone_depth=depth)
        result = run_experiment(
            train_pairs, val_pairs, test_pairs, tc, oc, cfg, loss_cfg,
            out_dir / f"resnet{depth}", run_seeds=run_seeds, allow_resize=allow_resize,
        )
        metrics = result.aggregate["metrics"] or {}
        rows.append(
            {
                "depth": depth,
                "accuracy_mean": metrics.get("accuracy", {}).get("mean"),
                "accuracy_std": metrics.get("accuracy", {}).get("std"),
                "f1_mean": metrics.get("f1", {}).get("mean"),
                "f1_std": metrics.get("f1", {}).get("std"),
            }
        )
    return rows


# ---------------------------------------------------------------------------
# Results file IO
# ---------------------------------------------------------------------------

RESULT_COLUMNS = ["a_path", "b_path", "label", "distance", "predicted", "ratio_a", "ratio_b"]


def write_results(path: str | Path, results: Sequence[PairResult]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for r in results:
            writer.writerow(
                [
                    r.pair.a.path,
                    r.pair.b.path,
                    r.pair.label,
                    repr(r.distance),
                    r.predicted,
                    "" if r.ratio_a is None else repr(r.ratio_a),
                    "" if r.ratio_b is None else repr(r.ratio_b),
                ]
            )
    os.replace(tmp, path)


def read_labeled_distances(path: str | Path) -> list[tuple[int, float]]:
    """Load (label, distance) rows back from a results CSV."""
    out: list[tuple[int, float]] = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append((int(row["label"]), float(row["distance"])))
    return out


def read_result_rows(path: str | Path) -> list[dict]:
    """Load full result rows; ratio columns come back as float or None."""
    out: list[dict] = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(
                {
                    "a_path": row["a_path"],
                    "b_path": row["b_path"],
                    "label": int(row["label"]),
                    "distance": float(row["distance"]),
                    "predicted": row["predicted"],
                    "ratio_a": float(row["ratio_a"]) if row["ratio_a"] else None,
                    "ratio_b": float(row["ratio_b"]) if row["ratio_b"] else None,
                }
            )
    return out
