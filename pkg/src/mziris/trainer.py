"""Seeded training orchestration: one run, and the repeated-runs protocol.

Every run of an experiment shares the same train/validation split and the
same per-epoch batch order (both derived from the experiment seed); runs
differ only in their model initialization seed. The best epoch is the one
with the lowest validation loss, and its checkpoint is what testing uses.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .encoder import (
    EncoderConfig,
    LossConfig,
    build_model,
    inputs_to_tensor,
    loss_from_embeddings,
    pair_distances,
    save_checkpoint,
)
from .errors import Divergence
from .pairing import MZ, PairRecord
from .preprocess import InputVariant, load_variant_input

EPOCH_KEYS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "avg_pos_dist", "avg_neg_dist")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must be in (0, 1)")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 20
    val_fraction: float = 0.3
    n_runs: int = 5
    seed: int = 0
    variant: InputVariant = InputVariant.ORIGINAL
    tau: float = 0.5

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.epochs < 1 or self.n_runs < 1:
            raise ValueError("batch_size, epochs and n_runs must all be >= 1")
        if not 0 < self.tau < 1:
            raise ValueError("tau must be in (0, 1)")


@dataclass
class RunArtifacts:
    per_epoch: list[dict]
    best_epoch: int
    checkpoint_ref: str
    seed: int
    split_checksum: str
    step_count: int
    metrics_log: str
    test_metrics: dict | None = None
    test_results_path: str | None = None


def pair_ids_checksum(pairs: Sequence[PairRecord]) -> str:
    payload = "\n".join(sorted(p.pair_id() for p in pairs))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def pairs_to_tensors(
    pairs: Sequence[PairRecord],
    variant: InputVariant,
    size: int,
    allow_resize: bool = False,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Preprocess both sides of every pair into (A, B, labels) tensors."""
    cache: dict[str, np.ndarray] = {}

    def prep(rec) -> np.ndarray:
        if rec.path not in cache:
            cache[rec.path] = load_variant_input(
                rec, variant, size=size, allow_resize=allow_resize
            ).values
        return cache[rec.path]

    cfg = EncoderConfig(input_size=size)
    a = inputs_to_tensor([prep(p.a) for p in pairs], cfg)
    b = inputs_to_tensor([prep(p.b) for p in pairs], cfg)
    y = torch.tensor([float(p.label) for p in pairs])
    return a, b, y


def _epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def _eval_metrics(
    model: torch.nn.Module,
    a: torch.Tensor,
    b: torch.Tensor,
    y: torch.Tensor,
    tc: TrainConfig,
    loss_cfg: LossConfig,
    mode: str,
) -> tuple[float, float, float | None, float | None]:
    """Loss, accuracy and per-class mean distances in inference mode."""
    model.eval()
    with torch.no_grad():
        losses = []
        dists = []
        for lo in range(0, len(y), tc.batch_size):
            sl = slice(lo, lo + tc.batch_size)
            e1, e2 = model(a[sl]), model(b[sl])
            d = pair_distances(e1, e2, mode=mode)
            dists.append(d)
            losses.append(
                loss_from_embeddings(e1, e2, y[sl], loss_cfg, mode=mode) * (d.shape[0])
            )
        d_all = torch.cat(dists)
        loss = float(torch.stack(losses).sum() / len(y))
        acc = float(((d_all < tc.tau).float() == y).float().mean())
        pos = d_all[y == 1]
        neg = d_all[y == 0]
        avg_pos = float(pos.mean()) if len(pos) else None
        avg_neg = float(neg.mean()) if len(neg) else None
    return loss, acc, avg_pos, avg_neg


def train_one_run(
    model: torch.nn.Module,
    train_pairs: Sequence[PairRecord],
    val_pairs: Sequence[PairRecord],
    tc: TrainConfig,
    oc: OptimizerConfig,
    encoder_cfg: EncoderConfig,
    loss_cfg: LossConfig,
    run_seed: int,
    out_dir: str | Path,
    allow_resize: bool = False,
) -> RunArtifacts:
    """Train for the configured epochs, logging per-epoch metrics.

    Validation pairs never contribute gradients; they are scored in
    inference mode after each epoch. A checkpoint is written at every new
    validation-loss minimum. A non-finite loss aborts with a diagnostic
    artifact and a Divergence error.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_ids = {p.pair_id() for p in train_pairs}
    val_ids = {p.pair_id() for p in val_pairs}
    overlap = train_ids & val_ids
    if overlap:
        raise ValueError(f"train/validation pairs overlap: {sorted(overlap)[:3]}...")

    a_tr, b_tr, y_tr = pairs_to_tensors(
        train_pairs, tc.variant, encoder_cfg.input_size, allow_resize
    )
    have_val = len(val_pairs) > 0
    if have_val:
        a_va, b_va, y_va = pairs_to_tensors(
            val_pairs, tc.variant, encoder_cfg.input_size, allow_resize
        )

    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=oc.learning_rate,
        betas=(oc.beta1, oc.beta2),
        eps=oc.epsilon,
    )
    mode = encoder_cfg.distance_mode
    n = len(train_pairs)
    checkpoint_path = out_dir / "checkpoint_best.pt"
    metrics_path = out_dir / "metrics.jsonl"
    lines: list[str] = []
    per_epoch: list[dict] = []
    best_loss = math.inf
    best_epoch = 0
    steps = 0

    def flush_log() -> None:
        tmp = metrics_path.with_name(metrics_path.name + ".tmp")
        tmp.write_text("".join(lines), encoding="utf-8")
        tmp.replace(metrics_path)

    for epoch in range(1, tc.epochs + 1):
        model.train()
        perm = _epoch_permutation(tc.seed, epoch, n)
        loss_sum = 0.0
        correct = 0
        for lo in range(0, n, tc.batch_size):
            idx = torch.from_numpy(perm[lo : lo + tc.batch_size].copy())
            e1, e2 = model(a_tr[idx]), model(b_tr[idx])
            d = pair_distances(e1, e2, mode=mode)
            loss = loss_from_embeddings(e1, e2, y_tr[idx], loss_cfg, mode=mode)
            if not torch.isfinite(loss):
                diag = {"epoch": epoch, "step": steps, "loss": float(loss)}
                (out_dir / "divergence.json").write_text(json.dumps(diag), encoding="utf-8")
                flush_log()
                raise Divergence(f"non-finite loss at epoch {epoch}, step {steps}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            steps += 1
            loss_sum += float(loss.detach()) * len(idx)
            correct += int(((d < tc.tau).float() == y_tr[idx]).sum())

        entry: dict = {
            "epoch": epoch,
            "train_loss": loss_sum / n,
            "train_acc": correct / n,
        }
        if have_val:
            val_loss, val_acc, avg_pos, avg_neg = _eval_metrics(
                model, a_va, b_va, y_va, tc, loss_cfg, mode
            )
            entry.update(
                val_loss=val_loss, val_acc=val_acc, avg_pos_dist=avg_pos, avg_neg_dist=avg_neg
            )
            selection_loss = val_loss
        else:
            entry.update(val_loss=None, val_acc=None, avg_pos_dist=None, avg_neg_dist=None)
            selection_loss = entry["train_loss"]
        per_epoch.append(entry)
        lines.append(json.dumps(entry) + "\n")

        if selection_loss < best_loss:
            best_loss = selection_loss
            best_epoch = epoch
            save_checkpoint(
                checkpoint_path, model, encoder_cfg, loss_cfg, run_seed, epoch, selection_loss
            )
            _annotate_sidecar(checkpoint_path, tc.variant)

    flush_log()
    return RunArtifacts(
        per_epoch=per_epoch,
        best_epoch=best_epoch,
        checkpoint_ref=str(checkpoint_path),
        seed=run_seed,
        split_checksum=pair_ids_checksum(val_pairs),
        step_count=steps,
        metrics_log=str(metrics_path),
    )


def _annotate_sidecar(checkpoint_path: Path, variant: InputVariant) -> None:
    sidecar = checkpoint_path.with_suffix(".json")
    data = json.loads(sidecar.read_text(encoding="utf-8"))
    data["variant"] = variant.value
    sidecar.write_text(json.dumps(data, indent=1), encoding="utf-8")


@dataclass
class ExperimentResult:
    runs: list[RunArtifacts]
    aggregate: dict
    incomplete: list[dict] = field(default_factory=list)


AGGREGATE_METRICS = ("accuracy", "precision", "recall", "f1", "avg_pos_dist", "avg_neg_dist")


def aggregate_metrics(per_run: Sequence[dict]) -> dict:
    """Mean and population standard deviation per metric across runs."""
    out: dict = {}
    for key in AGGREGATE_METRICS:
        values = [m.get(key) for m in per_run]
        if any(v is None for v in values) or not values:
            out[key] = {"mean": None, "std": None, "values": values}
        else:
            arr = np.asarray(values, dtype=np.float64)
            out[key] = {"mean": float(arr.mean()), "std": float(arr.std()), "values": values}
    return out


def run_experiment(
    train_pairs: Sequence[PairRecord],
    val_pairs: Sequence[PairRecord],
    test_pairs: Sequence[PairRecord] | None,
    tc: TrainConfig,
    oc: OptimizerConfig,
    encoder_cfg: EncoderConfig,
    loss_cfg: LossConfig,
    out_dir: str | Path,
    run_seeds: Sequence[int] | None = None,
    ratios: dict[str, float] | None = None,
    allow_resize: bool = False,
) -> ExperimentResult:
    """The repeated-runs protocol: n_runs trainings over one fixed split.

    Each run gets its own model-initialization seed; split and batching are
    identical across runs. When test pairs are given, each run's best
    checkpoint is evaluated on them and the aggregate reports mean and
    standard deviation over runs. Diverged runs are recorded as incomplete
    and excluded from the aggregate.
    """
    from . import evaluation
    from .encoder import load_checkpoint

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if run_seeds is None:
        run_seeds = [tc.seed + 1000 * (i + 1) for i in range(tc.n_runs)]
    if len(run_seeds) != tc.n_runs:
        raise ValueError(f"need {tc.n_runs} run seeds, got {len(run_seeds)}")

    runs: list[RunArtifacts] = []
    incomplete: list[dict] = []
    per_run_test: list[dict] = []
    last_error: Exception | None = None

    for i, run_seed in enumerate(run_seeds):
        run_dir = out_dir / f"run_{i:02d}"
        torch.manual_seed(run_seed)
        model = build_model(encoder_cfg)
        try:
            artifacts = train_one_run(
                model, train_pairs, val_pairs, tc, oc, encoder_cfg, loss_cfg,
                run_seed, run_dir, allow_resize=allow_resize,
            )
        except Divergence as exc:
            incomplete.append({"run": i, "seed": run_seed, "error": str(exc)})
            last_error = exc
            continue

        if test_pairs:
            best_model, best_cfg, best_loss_cfg, _ = load_checkpoint(artifacts.checkpoint_ref)
            results = evaluation.evaluate_pairs(
                best_model, best_cfg, test_pairs, tc.variant, tau=tc.tau,
                ratios=ratios, batch_size=tc.batch_size, allow_resize=allow_resize,
            )
            report = evaluation.compute_metrics(results)
            artifacts.test_metrics = report.to_dict()
            results_path = run_dir / "test_results.csv"
            evaluation.write_results(results_path, results)
            artifacts.test_results_path = str(results_path)
            per_run_test.append(artifacts.test_metrics)
        runs.append(artifacts)

    if not runs:
        raise last_error if last_error is not None else RuntimeError("no runs executed")

    checksums = {r.split_checksum for r in runs}
    if len(checksums) > 1:
        raise RuntimeError(f"validation split varied across runs: {checksums}")

    aggregate = {
        "n_runs": tc.n_runs,
        "completed_runs": len(runs),
        "run_seeds": list(run_seeds),
        "variant": tc.variant.value,
        "split_checksum": runs[0].split_checksum,
        "best_epochs": [r.best_epoch for r in runs],
        "metrics": aggregate_metrics(per_run_test) if per_run_test else None,
        "incomplete_runs": incomplete,
    }
    agg_path = out_dir / "aggregate.json"
    tmp = agg_path.with_name(agg_path.name + ".tmp")
    tmp.write_text(json.dumps(aggregate, indent=1), encoding="utf-8")
    tmp.replace(agg_path)
    return ExperimentResult(runs=runs, aggregate=aggregate, incomplete=incomplete)
