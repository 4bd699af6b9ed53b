"""The mziris command suite: fixtures, quality, pairing, training, evaluation, reporting.

Exit codes: 0 success, 2 input/config error, 3 pairing infeasible,
4 training divergence, 5 refusal to overwrite existing outputs.
All randomness flows from named --seed flags; outputs are written to a
temp file and renamed. MZIRIS_OUT provides the default output directory.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import evaluation, fixtures, pairing, preprocess, quality, report
from .config import load_experiment_config
from .encoder import build_model, load_checkpoint
from .errors import (
    ConfigError,
    DecodeError,
    DimensionMismatch,
    InsufficientNegatives,
    MissingMask,
    MissingQuality,
    NoTwinGroups,
    SizeMismatch,
)
from .manifest import read_manifest, write_manifest
from .pairing import build_test_pairs, build_train_pairs, read_pairs, split_train_val, write_pairs
from .preprocess import InputVariant
from .trainer import run_experiment

EXIT_INPUT = 2
EXIT_PAIRING = 3
EXIT_DIVERGENCE = 4
EXIT_OVERWRITE = 5

INPUT_ERRORS = (
    ConfigError,
    DecodeError,
    SizeMismatch,
    MissingMask,
    DimensionMismatch,
    MissingQuality,
    OSError,
    KeyError,
)


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guard_overwrite(paths: list[Path], overwrite: bool) -> None:
    for p in paths:
        if p.exists():
            if overwrite:
                return
            _fail(EXIT_OVERWRITE, f"{p} exists; pass --overwrite to replace it")


@click.group()
def main() -> None:
    """Monozygotic iris-pair pipeline."""


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------


@main.command("fixtures")
@click.option("--out-dir", envvar="MZIRIS_OUT", required=True, type=click.Path())
@click.option("--seed", default=7, show_default=True)
@click.option("--subjects", default=6, show_default=True)
@click.option("--sessions", default=2, show_default=True)
@click.option("--twin-groups", default=3, show_default=True)
@click.option("--overfit", is_flag=True, help="also generate the fixed-geometry overfit set")
@click.option("--overwrite", is_flag=True)
def cmd_fixtures(out_dir, seed, subjects, sessions, twin_groups, overfit, overwrite) -> None:
    """Generate synthetic iris images, masks, and manifests for desk-scale runs."""
    out = Path(out_dir)
    _guard_overwrite([out / "train_manifest.csv", out / "twin_manifest.csv"], overwrite)
    train = fixtures.generate_image_set(
        out, subjects=subjects, sessions=sessions, seed=seed, name="train"
    )
    twin = fixtures.generate_image_set(
        out, subjects=0, sessions=sessions, seed=seed + 1, name="twin",
        twin_groups=twin_groups,
    )
    click.echo(f"train manifest: {train.manifest_path} ({len(train.records)} images)")
    click.echo(f"twin manifest:  {twin.manifest_path} ({len(twin.records)} images)")
    if overfit:
        ov_train, ov_val = fixtures.generate_overfit_set(out / "overfit", seed=seed)
        click.echo(f"overfit train:  {ov_train.manifest_path} ({len(ov_train.records)} images)")
        click.echo(f"overfit val:    {ov_val.manifest_path} ({len(ov_val.records)} images)")


# ---------------------------------------------------------------------------
# quality
# ---------------------------------------------------------------------------


@main.command("quality")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--threshold", default=50, show_default=True)
@click.option("--out", "report_path", required=True, type=click.Path(), help="quality report JSONL")
@click.option("--out-manifest", "filtered_path", default=None, type=click.Path())
@click.option("--geometry", "geometry_path", default=None, type=click.Path(),
              help="geometry annotation sidecar (preferred over fitting)")
@click.option("--allow-resize", is_flag=True)
@click.option("--no-screen", is_flag=True, help="emit reports but keep every entry")
@click.option("--overwrite", is_flag=True)
def cmd_quality(
    manifest_path, threshold, report_path, filtered_path, geometry_path,
    allow_resize, no_screen, overwrite,
) -> None:
    """Score every manifest image and write the screened manifest."""
    report_path = Path(report_path)
    if filtered_path is None:
        stem = Path(manifest_path).stem
        filtered_path = report_path.parent / f"{stem}_filtered.csv"
    filtered_path = Path(filtered_path)
    _guard_overwrite([report_path, filtered_path], overwrite)

    try:
        records = read_manifest(manifest_path)
        annotations = (
            fixtures.load_geometry_sidecar(geometry_path) if geometry_path else {}
        )
        lines = []
        for rec in records:
            image = preprocess.load_image(rec.path, allow_resize=allow_resize)
            mask = (
                preprocess.load_mask(rec.mask_path, expected_shape=image.shape)
                if rec.mask_path
                else None
            )
            rep, _ = quality.quality_report_for_image(
                image, annotations.get(rec.path), mask=mask
            )
            rec.quality = rep
            rec.overall_quality = rep.overall
            lines.append(json.dumps({"path": rec.path, **rep.to_dict()}))
    except INPUT_ERRORS as exc:
        _fail(EXIT_INPUT, str(exc))

    report_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = report_path.with_name(report_path.name + ".tmp")
    tmp.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    tmp.replace(report_path)

    if no_screen:
        kept, rejected = records, []
    else:
        kept, rejected = quality.filter_manifest(records, threshold=threshold)
    write_manifest(filtered_path, kept)
    for rec, reason in rejected:
        click.echo(f"rejected {rec.path}: {reason}", err=True)
    click.echo(f"kept {len(kept)}/{len(records)} images -> {filtered_path}")


# ---------------------------------------------------------------------------
# build-pairs
# ---------------------------------------------------------------------------


@main.command("build-pairs")
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--mode", type=click.Choice(["train", "test"]), required=True)
@click.option("--seed", required=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--max-pos-per-subject", default=None, type=int)
@click.option("--overwrite", is_flag=True)
def cmd_build_pairs(manifest_path, mode, seed, out_path, max_pos_per_subject, overwrite) -> None:
    """Build a balanced MZ/NMZ pair file from a filtered manifest."""
    out_path = Path(out_path)
    _guard_overwrite([out_path], overwrite)
    try:
        records = read_manifest(manifest_path)
    except INPUT_ERRORS as exc:
        _fail(EXIT_INPUT, str(exc))
    try:
        if mode == "train":
            pairs = build_train_pairs(records, seed, max_pos_per_subject=max_pos_per_subject)
        else:
            pairs = build_test_pairs(records, seed)
    except (InsufficientNegatives, NoTwinGroups) as exc:
        _fail(EXIT_PAIRING, f"{type(exc).__name__}: {exc}")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_pairs(out_path, pairs, seed=seed)
    n_pos = sum(1 for p in pairs if p.label == pairing.MZ)
    click.echo(f"{len(pairs)} pairs -> {out_path} (MZ={n_pos}, NMZ={len(pairs) - n_pos})")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _load_ratios(quality_jsonl: str | None) -> dict[str, float] | None:
    if not quality_jsonl:
        return None
    ratios: dict[str, float] = {}
    for line in Path(quality_jsonl).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if obj.get("pupil_iris_ratio") is not None:
            ratios[obj["path"]] = float(obj["pupil_iris_ratio"])
    return ratios


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--variant", default=None, type=click.Choice([v.value for v in InputVariant]))
@click.option("--runs", "n_runs", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--epochs", default=None, type=int)
@click.option("--out-dir", envvar="MZIRIS_OUT", default=None, type=click.Path())
@click.option("--test-quality", "test_quality", default=None, type=click.Path(),
              help="quality JSONL used to attach pupil-iris ratios to test results")
@click.option("--overwrite", is_flag=True)
def cmd_train(config_path, variant, n_runs, seed, epochs, out_dir, test_quality, overwrite) -> None:
    """Run the seeded multi-run training protocol from a config file."""
    overrides = {
        "variant": variant,
        "n_runs": n_runs,
        "seed": seed,
        "epochs": epochs,
        "output_dir": out_dir,
    }
    try:
        cfg = load_experiment_config(config_path, overrides)
        if cfg.output_dir is None:
            raise ConfigError("no output_dir in config, --out-dir, or MZIRIS_OUT")
        if cfg.train_pairs is None or cfg.manifest is None:
            raise ConfigError("config must set train_pairs and manifest")
        out = Path(cfg.output_dir)
        _guard_overwrite([out / "aggregate.json"], overwrite)

        records = read_manifest(cfg.manifest)
        all_pairs = read_pairs(cfg.train_pairs, records)
        train_pairs, val_pairs = split_train_val(
            all_pairs, fraction=cfg.train.val_fraction, seed=cfg.train.seed
        )

        test_pairs = None
        if cfg.test_pairs:
            test_records = read_manifest(cfg.test_manifest) if cfg.test_manifest else records
            test_pairs = read_pairs(cfg.test_pairs, test_records)
        ratios = _load_ratios(test_quality)
    except INPUT_ERRORS as exc:
        _fail(EXIT_INPUT, str(exc))

    result = run_experiment(
        train_pairs, val_pairs, test_pairs,
        cfg.train, cfg.optimizer, cfg.encoder, cfg.loss,
        out, run_seeds=cfg.run_seeds, ratios=ratios, allow_resize=cfg.allow_resize,
    )
    click.echo(
        f"{len(result.runs)}/{cfg.train.n_runs} runs complete; "
        f"best epochs {result.aggregate['best_epochs']} -> {out / 'aggregate.json'}"
    )
    if result.incomplete:
        for item in result.incomplete:
            click.echo(f"run {item['run']} diverged: {item['error']}", err=True)
        sys.exit(EXIT_DIVERGENCE)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


@main.command("evaluate")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path())
@click.option("--pairs", "pairs_path", required=True, type=click.Path())
@click.option("--manifest", "manifest_path", required=True, type=click.Path())
@click.option("--tau", default=0.5, show_default=True)
@click.option("--sweep", default=None, help="comma-separated thresholds, e.g. 0.2,0.4,0.6,0.8")
@click.option("--variant", default=None, type=click.Choice([v.value for v in InputVariant]))
@click.option("--quality", "quality_jsonl", default=None, type=click.Path(),
              help="quality JSONL supplying pupil-iris ratios")
@click.option("--out-dir", envvar="MZIRIS_OUT", required=True, type=click.Path())
@click.option("--batch-size", default=32, show_default=True)
@click.option("--allow-resize", is_flag=True)
@click.option("--overwrite", is_flag=True)
def cmd_evaluate(
    checkpoint_path, pairs_path, manifest_path, tau, sweep, variant,
    quality_jsonl, out_dir, batch_size, allow_resize, overwrite,
) -> None:
    """Score a pair file with a trained checkpoint and write metric reports."""
    out = Path(out_dir)
    results_path = out / "results.csv"
    metrics_path = out / "metrics.json"
    sweep_path = out / "sweep.json"
    _guard_overwrite([results_path, metrics_path], overwrite)

    try:
        model, encoder_cfg, _, sidecar = load_checkpoint(checkpoint_path)
        ckpt_variant = sidecar.get("variant")
        if variant is not None and ckpt_variant is not None and variant != ckpt_variant:
            raise ConfigError(
                f"checkpoint was trained on variant {ckpt_variant!r}, requested {variant!r}"
            )
        use_variant = InputVariant(variant or ckpt_variant or "original")
        records = read_manifest(manifest_path)
        pairs = read_pairs(pairs_path, records)
        ratios = _load_ratios(quality_jsonl)
        results = evaluation.evaluate_pairs(
            model, encoder_cfg, pairs, use_variant, tau=tau,
            ratios=ratios, batch_size=batch_size, allow_resize=allow_resize,
        )
    except INPUT_ERRORS as exc:
        _fail(EXIT_INPUT, str(exc))

    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_results(results_path, results)
    metrics = evaluation.compute_metrics(results)
    tmp = metrics_path.with_name(metrics_path.name + ".tmp")
    tmp.write_text(json.dumps(metrics.to_dict(), indent=1), encoding="utf-8")
    tmp.replace(metrics_path)
    click.echo(f"accuracy {metrics.accuracy:.4f} on {len(results)} pairs -> {metrics_path}")

    if sweep:
        try:
            taus = [float(x) for x in sweep.split(",") if x.strip()]
        except ValueError:
            _fail(EXIT_INPUT, f"bad --sweep list: {sweep!r}")
        table = evaluation.threshold_sweep(
            [(r.pair.label, r.distance) for r in results], taus
        )
        payload = {repr(t): rep.to_dict() for t, rep in table.items()}
        tmp = sweep_path.with_name(sweep_path.name + ".tmp")
        tmp.write_text(json.dumps(payload, indent=1), encoding="utf-8")
        tmp.replace(sweep_path)
        click.echo(f"threshold sweep at {taus} -> {sweep_path}")


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@main.command("report")
@click.option("--run-dir", "run_dir", required=True, type=click.Path())
@click.option("--out-dir", default=None, type=click.Path(),
              help="default: <run-dir>/report")
@click.option("--results", "results_path", default=None, type=click.Path(),
              help="results CSV for the dilation plot (default: first run's test results)")
@click.option("--overwrite", is_flag=True)
def cmd_report(run_dir, out_dir, results_path, overwrite) -> None:
    """Render training curves, dilation bars, and the summary table."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir else run_dir / "report"
    acc_png = out / "accuracy.png"
    loss_png = out / "loss.png"
    dilation_png = out / "dilation.png"
    table_md = out / "summary.md"
    _guard_overwrite([acc_png, loss_png, dilation_png, table_md], overwrite)

    agg_path = run_dir / "aggregate.json"
    if not agg_path.exists():
        _fail(EXIT_INPUT, f"missing artifact {agg_path}")
    aggregate = json.loads(agg_path.read_text(encoding="utf-8"))
    run_dirs = sorted(p for p in run_dir.glob("run_*") if (p / "metrics.jsonl").exists())
    if not run_dirs:
        _fail(EXIT_INPUT, f"no run_*/metrics.jsonl under {run_dir}")

    if results_path is None:
        candidates = [p / "test_results.csv" for p in run_dirs]
        found = [p for p in candidates if p.exists()]
        results_path = found[0] if found else None
    if results_path is None:
        _fail(EXIT_INPUT, "no test results CSV available for the dilation plot")
    rows = evaluation.read_result_rows(results_path)
    if any(r["ratio_a"] is None or r["ratio_b"] is None for r in rows):
        _fail(EXIT_INPUT, f"{results_path} lacks pupil-iris ratios; rerun evaluate with --quality")

    out.mkdir(parents=True, exist_ok=True)
    logs = report.load_metrics_logs(run_dirs)
    report.plot_accuracy_curves(logs, acc_png)
    report.plot_loss_curves(logs, loss_png)
    bins = evaluation.dilation_bins_from_rows(
        [(r["label"], r["predicted"], r["ratio_a"], r["ratio_b"]) for r in rows]
    )
    report.plot_dilation_bars(bins, dilation_png)
    report.render_summary_table(aggregate, table_md)
    click.echo(f"report written under {out}")


if __name__ == "__main__":
    main()
