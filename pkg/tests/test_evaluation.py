"""Threshold classification, metric arithmetic, sweeps, and dilation analysis."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from mziris.encoder import EncoderConfig, build_model, distance, embed
from mziris.errors import EmptyResults, MissingGeometry
from mziris.evaluation import (
    MetricReport,
    PairResult,
    classify,
    compute_metrics,
    dilation_error_analysis,
    evaluate_pairs,
    read_labeled_distances,
    read_result_rows,
    threshold_sweep,
    write_results,
)
from mziris.pairing import MZ, NMZ, PairRecord, build_train_pairs
from mziris.preprocess import InputVariant

from conftest import make_record


def make_result(label, dist, tau=0.5, ratio_a=None, ratio_b=None, idx=[0]):
    idx[0] += 1
    pair = PairRecord(
        make_record("a", "L", 1, path=f"ra{idx[0]}"),
        make_record("b", "R", 1, path=f"rb{idx[0]}"),
        label,
        "synthetic",
    )
    return PairResult(pair, dist, classify(dist, tau), ratio_a, ratio_b)


# ---------------------------------------------------------------------------
# classify
# ---------------------------------------------------------------------------


def test_classify_reference_distances():
    # The published average distances straddle the midpoint threshold.
    assert classify(0.38, 0.5) == "MZ"
    assert classify(0.77, 0.5) == "NMZ"


def test_boundary_goes_to_nmz():
    assert classify(0.5, 0.5) == "NMZ"


def test_classify_monotone_in_tau():
    for d in (0.0, 0.2, 0.5, 0.9):
        previous = None
        for tau in (0.1, 0.3, 0.5, 0.7, 0.9):
            call = classify(d, tau)
            if previous == "MZ":
                assert call == "MZ"  # raising tau never flips MZ back to NMZ
            previous = call


def test_classify_validates_inputs():
    with pytest.raises(ValueError):
        classify(-0.1)
    with pytest.raises(ValueError):
        classify(0.5, tau=0.0)


# ---------------------------------------------------------------------------
# compute_metrics
# ---------------------------------------------------------------------------


def test_all_correct_predictions():
    results = [make_result(MZ, 0.1), make_result(MZ, 0.2), make_result(NMZ, 0.9)]
    report = compute_metrics(results)
    assert report.accuracy == 1.0
    assert report.f1 == 1.0
    assert report.counts == {"TP": 2, "FP": 0, "TN": 1, "FN": 0}


def test_hand_built_confusion_arithmetic():
    results = (
        [make_result(MZ, 0.1)] * 3          # TP
        + [make_result(NMZ, 0.1)] * 1       # FP
        + [make_result(NMZ, 0.9)] * 4       # TN
        + [make_result(MZ, 0.9)] * 2        # FN
    )
    report = compute_metrics(results)
    assert report.counts == {"TP": 3, "FP": 1, "TN": 4, "FN": 2}
    assert report.accuracy == pytest.approx(0.7, abs=1e-15)
    assert report.precision == pytest.approx(0.75, abs=1e-15)
    assert report.recall == pytest.approx(0.6, abs=1e-15)
    assert report.f1 == pytest.approx(2 * 0.75 * 0.6 / 1.35, abs=1e-15)
    assert sum(report.counts.values()) == len(results)


def test_distance_averages_grouped_by_true_label():
    results = [
        make_result(MZ, 0.2),
        make_result(MZ, 0.8),   # an FN still counts toward the positive average
        make_result(NMZ, 0.4),  # an FP still counts toward the negative average
    ]
    report = compute_metrics(results)
    assert report.avg_pos_dist == pytest.approx(0.5, abs=1e-15)
    assert report.avg_neg_dist == pytest.approx(0.4, abs=1e-15)


def test_undefined_metrics_are_none_not_zero():
    all_negative_truth = [make_result(NMZ, 0.9), make_result(NMZ, 0.8)]
    report = compute_metrics(all_negative_truth)
    assert report.precision is None  # no positive predictions
    assert report.recall is None  # no true positives exist
    assert report.f1 is None
    assert report.avg_pos_dist is None
    assert report.accuracy == 1.0


def test_empty_results_rejected():
    with pytest.raises(EmptyResults):
        compute_metrics([])


# ---------------------------------------------------------------------------
# threshold_sweep
# ---------------------------------------------------------------------------


def brute_force_report(labeled, tau):
    tp = sum(1 for lab, d in labeled if lab == MZ and d < tau)
    fn = sum(1 for lab, d in labeled if lab == MZ and d >= tau)
    fp = sum(1 for lab, d in labeled if lab == NMZ and d < tau)
    tn = sum(1 for lab, d in labeled if lab == NMZ and d >= tau)
    return tp, fp, tn, fn


def test_sweep_extremes():
    labeled = [(MZ, 0.3), (MZ, 0.4), (NMZ, 0.6), (NMZ, 0.7)]
    below = threshold_sweep(labeled, [0.01])[0.01]
    assert below.recall == 0.0 and below.counts["TP"] == 0
    above = threshold_sweep(labeled, [5.0])[5.0]
    assert above.recall == 1.0
    assert above.precision == pytest.approx(0.5)  # positive prevalence


def test_sweep_matches_brute_force_recomputation(rng):
    labeled = [(int(rng.integers(0, 2)), float(rng.uniform(0, 1.2))) for _ in range(200)]
    table = threshold_sweep(labeled, (0.2, 0.4, 0.6, 0.8))
    for tau, report in table.items():
        tp, fp, tn, fn = brute_force_report(labeled, tau)
        assert report.counts == {"TP": tp, "FP": fp, "TN": tn, "FN": fn}


def test_sweep_single_tau_equals_compute_metrics(rng):
    labeled = [(int(rng.integers(0, 2)), float(rng.uniform(0, 1.2))) for _ in range(60)]
    results = [make_result(lab, d, tau=0.45) for lab, d in labeled]
    direct = compute_metrics(results)
    swept = threshold_sweep(labeled, [0.45])[0.45]
    assert direct.to_dict() == swept.to_dict()


def test_confusion_is_step_function_of_tau(rng):
    labeled = [(int(rng.integers(0, 2)), float(rng.uniform(0, 1))) for _ in range(40)]
    distances = sorted({d for _, d in labeled})
    # Between consecutive observed distances the counts must not change.
    for lo, hi in zip(distances, distances[1:]):
        mid1 = lo + (hi - lo) / 3
        mid2 = lo + 2 * (hi - lo) / 3
        a = threshold_sweep(labeled, [mid1])[mid1].counts
        b = threshold_sweep(labeled, [mid2])[mid2].counts
        assert a == b


# ---------------------------------------------------------------------------
# dilation_error_analysis
# ---------------------------------------------------------------------------


def test_single_bin_no_errors():
    results = [
        make_result(MZ, 0.1, ratio_a=0.4, ratio_b=0.42),
        make_result(NMZ, 0.9, ratio_a=0.4, ratio_b=0.41),
    ]
    rows = dilation_error_analysis(results, bins=[0.0, 1.0])
    assert len(rows) == 1
    assert rows[0]["fn_rate"] == 0.0
    assert rows[0]["fp_rate"] == 0.0


def test_planted_monotone_fn_structure():
    results = []
    # Small-difference bin: no FN; middle: 1/4 FN; large: 3/4 FN.
    specs = [(0.05, 0), (0.25, 1), (0.45, 3)]
    for center, n_fn in specs:
        for i in range(4):
            dist = 0.9 if i < n_fn else 0.1  # 0.9 -> predicted NMZ (an FN for MZ)
            results.append(make_result(MZ, dist, ratio_a=0.4, ratio_b=0.4 + center))
        results.append(make_result(NMZ, 0.9, ratio_a=0.4, ratio_b=0.4 + center))
    rows = dilation_error_analysis(results, bins=[0.0, 0.15, 0.35, 0.55])
    rates = [row["fn_rate"] for row in rows]
    assert rates == [0.0, 0.25, 0.75]
    assert all(row["fp_rate"] == 0.0 for row in rows)
    assert rates == sorted(rates)


def test_rates_recover_integer_counts():
    results = []
    for i in range(7):
        results.append(make_result(MZ, 0.9 if i < 3 else 0.1, ratio_a=0.3, ratio_b=0.35))
    rows = dilation_error_analysis(results, bins=[0.0, 0.1])
    row = rows[0]
    assert row["fn"] == 3 and row["n_mz"] == 7
    assert row["fn_rate"] * row["n_mz"] == pytest.approx(row["fn"], abs=1e-9)


def test_nmz_only_bin_has_undefined_fn_rate():
    results = [make_result(NMZ, 0.9, ratio_a=0.4, ratio_b=0.45)]
    rows = dilation_error_analysis(results, bins=[0.0, 0.1])
    assert rows[0]["fn_rate"] is None
    assert rows[0]["fp_rate"] == 0.0


def test_default_bins_span_observed_range():
    results = [
        make_result(MZ, 0.1, ratio_a=0.4, ratio_b=0.4 + d) for d in (0.0, 0.1, 0.2, 0.3, 0.4)
    ]
    rows = dilation_error_analysis(results)
    assert len(rows) == 5
    assert rows[0]["lo"] == pytest.approx(0.0)
    assert rows[-1]["hi"] == pytest.approx(0.4)
    assert sum(r["n_mz"] for r in rows) == len(results)


def test_missing_ratio_raises():
    with pytest.raises(MissingGeometry):
        dilation_error_analysis([make_result(MZ, 0.1)])


# ---------------------------------------------------------------------------
# evaluate_pairs and results files
# ---------------------------------------------------------------------------


def test_evaluate_pairs_matches_embedding_oracle(small_fixture_set, tmp_path):
    records = [r for r in small_fixture_set.records if r.twin_group is None]
    pairs = build_train_pairs(records, seed=1)[:6]
    cfg = EncoderConfig(input_size=64)
    torch.manual_seed(2)
    model = build_model(cfg)
    results = evaluate_pairs(model, cfg, pairs, InputVariant.ORIGINAL, tau=0.5)

    from mziris.preprocess import load_variant_input

    for pair, res in zip(pairs, results):
        ea = embed(model, [load_variant_input(pair.a, InputVariant.ORIGINAL, 64).values], cfg)[0]
        eb = embed(model, [load_variant_input(pair.b, InputVariant.ORIGINAL, 64).values], cfg)[0]
        assert res.distance == pytest.approx(distance(ea, eb), rel=1e-5)
        assert res.predicted == classify(res.distance, 0.5)

    out = tmp_path / "results.csv"
    write_results(out, results)
    loaded = read_labeled_distances(out)
    assert loaded == [(r.pair.label, r.distance) for r in results]
    rows = read_result_rows(out)
    assert [r["predicted"] for r in rows] == [r.predicted for r in results]


def test_results_file_preserves_ratios(tmp_path):
    results = [make_result(MZ, 0.25, ratio_a=0.31, ratio_b=0.44)]
    out = tmp_path / "results.csv"
    write_results(out, results)
    row = read_result_rows(out)[0]
    assert row["ratio_a"] == 0.31 and row["ratio_b"] == 0.44
