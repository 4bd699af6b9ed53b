"""Pair construction against a brute-force enumerator, and the seeded split."""

from __future__ import annotations

import random

import pytest

from mziris.errors import InsufficientNegatives, NoTwinGroups
from mziris.pairing import (
    MZ,
    NMZ,
    PairRecord,
    build_test_pairs,
    build_train_pairs,
    read_pairs,
    split_train_val,
    write_pairs,
)

from conftest import make_record


def brute_force_train_positives(manifest):
    """Independent O(n^2) enumeration over every ordered index pair."""
    out = set()
    for a in manifest:
        for b in manifest:
            if (
                a.subject_id == b.subject_id
                and a.eye == "L"
                and b.eye == "R"
                and a.session_date != b.session_date
            ):
                out.add((a.path, b.path))
    return out


def brute_force_test_positives(manifest):
    out = set()
    for a in manifest:
        for b in manifest:
            if (
                a.twin_group is not None
                and a.twin_group == b.twin_group
                and a.subject_id != b.subject_id
                and a.eye == "L"
                and b.eye == "R"
            ):
                out.add((a.path, b.path))
    return out


def toy_manifest():
    """2 subjects x {L, R} x 2 distinct dates each."""
    records = []
    for subject in ("s1", "s2"):
        for eye in ("L", "R"):
            for day in (1, 2):
                records.append(make_record(subject, eye, day))
    return records


def random_manifest(rng: random.Random, max_images: int = 12):
    n_subjects = rng.randint(1, 4)
    twin = rng.random() < 0.4
    records = []
    for s in range(n_subjects):
        subject = f"s{s}"
        group = f"g{s // 2}" if twin else None
        for _ in range(rng.randint(1, 3)):
            eye = rng.choice(["L", "R"])
            day = rng.randint(1, 4)
            path = f"{subject}_{eye}_{day}_{len(records)}.png"
            records.append(make_record(subject, eye, day, twin_group=group, path=path))
            if len(records) >= max_images:
                return records
    return records


# ---------------------------------------------------------------------------
# build_train_pairs
# ---------------------------------------------------------------------------


def test_toy_manifest_matches_brute_force():
    manifest = toy_manifest()
    pairs = build_train_pairs(manifest, seed=3)
    positives = {(p.a.path, p.b.path) for p in pairs if p.label == MZ}
    # 4 positives per subject: 2 L-dates x 2 R-dates minus same-date pairs = 2x2 - 0?
    # Each subject has L on days 1,2 and R on days 1,2: different-date combos = 2.
    assert positives == brute_force_train_positives(manifest)
    assert len(positives) == 4
    negatives = [p for p in pairs if p.label == NMZ]
    assert len(negatives) == len(positives)


def test_two_dates_two_subjects_counts():
    # With 2 distinct dates per eye, each subject contributes exactly
    # |L| * |R| - same-date = 2*2 - 2 = 2 positives.
    manifest = toy_manifest()
    pairs = build_train_pairs(manifest, seed=0)
    per_subject = {}
    for p in pairs:
        if p.label == MZ:
            per_subject[p.a.subject_id] = per_subject.get(p.a.subject_id, 0) + 1
    assert per_subject == {"s1": 2, "s2": 2}


def test_left_only_subject_contributes_nothing():
    manifest = toy_manifest() + [make_record("s3", "L", d) for d in (1, 2, 3)]
    pairs = build_train_pairs(manifest, seed=1)
    positives = [p for p in pairs if p.label == MZ]
    assert not any(p.a.subject_id == "s3" or p.b.subject_id == "s3" for p in positives)
    assert {(p.a.path, p.b.path) for p in positives} == brute_force_train_positives(manifest)


def test_insufficient_negatives():
    manifest = [make_record("s1", "L", 1), make_record("s1", "R", 2)]
    with pytest.raises(InsufficientNegatives):
        build_train_pairs(manifest, seed=0)


def test_pair_invariants_on_random_manifests():
    rng = random.Random(99)
    for trial in range(50):
        manifest = random_manifest(rng)
        try:
            pairs = build_train_pairs(manifest, seed=trial)
        except InsufficientNegatives:
            continue
        positives = {(p.a.path, p.b.path) for p in pairs if p.label == MZ}
        assert positives == brute_force_train_positives(manifest)
        n_pos = sum(1 for p in pairs if p.label == MZ)
        n_neg = len(pairs) - n_pos
        assert n_pos == n_neg
        seen = set()
        for p in pairs:
            assert p.a.path != p.b.path
            key = frozenset((p.a.path, p.b.path))
            assert key not in seen
            seen.add(key)
            if p.label == NMZ:
                assert p.a.subject_id != p.b.subject_id
                assert p.a.twin_group is None or p.a.twin_group != p.b.twin_group


def test_seed_determinism_and_variation():
    manifest = toy_manifest()
    a = build_train_pairs(manifest, seed=5)
    b = build_train_pairs(manifest, seed=5)
    assert [(p.a.path, p.b.path, p.label) for p in a] == [
        (p.a.path, p.b.path, p.label) for p in b
    ]
    c = build_train_pairs(manifest, seed=6)
    assert [(p.a.path, p.b.path) for p in a] != [(p.a.path, p.b.path) for p in c]


def test_positive_cap_limits_per_subject():
    manifest = []
    for eye in ("L", "R"):
        for day in range(1, 5):
            manifest.append(make_record("s1", eye, day))
            manifest.append(make_record("s2", eye, day))
    pairs = build_train_pairs(manifest, seed=0, max_pos_per_subject=3)
    per_subject = {}
    for p in pairs:
        if p.label == MZ:
            per_subject[p.a.subject_id] = per_subject.get(p.a.subject_id, 0) + 1
    assert per_subject == {"s1": 3, "s2": 3}


# ---------------------------------------------------------------------------
# build_test_pairs
# ---------------------------------------------------------------------------


def test_single_twin_group_both_orientations():
    manifest = [
        make_record("tA", "L", 1, twin_group="g1"),
        make_record("tA", "R", 1, twin_group="g1"),
        make_record("tB", "L", 1, twin_group="g1"),
        make_record("tB", "R", 1, twin_group="g1"),
        # unrelated subjects so negatives exist
        make_record("u1", "L", 1),
        make_record("u1", "R", 1),
        make_record("u2", "L", 1),
        make_record("u2", "R", 1),
    ]
    pairs = build_test_pairs(manifest, seed=2)
    positives = {(p.a.path, p.b.path) for p in pairs if p.label == MZ}
    assert positives == brute_force_test_positives(manifest)
    assert len(positives) == 2  # A.L-B.R and B.L-A.R
    assert all(p.kind == "natural" for p in pairs)
    for p in pairs:
        if p.label == NMZ:
            assert p.a.subject_id != p.b.subject_id
            assert p.a.twin_group is None or p.a.twin_group != p.b.twin_group


def test_empty_manifest_gives_empty_pairs():
    assert build_test_pairs([], seed=0) == []


def test_no_twin_groups_raises():
    with pytest.raises(NoTwinGroups):
        build_test_pairs(toy_manifest(), seed=0)


# ---------------------------------------------------------------------------
# split_train_val
# ---------------------------------------------------------------------------


def _dummy_pairs(n_pos: int, n_neg: int):
    pairs = []
    for i in range(n_pos):
        pairs.append(
            PairRecord(
                make_record("a", "L", 1, path=f"p{i}a"),
                make_record("a", "R", 2, path=f"p{i}b"),
                MZ,
                "synthetic",
            )
        )
    for i in range(n_neg):
        pairs.append(
            PairRecord(
                make_record("x", "L", 1, path=f"n{i}a"),
                make_record("y", "R", 1, path=f"n{i}b"),
                NMZ,
                "synthetic",
            )
        )
    return pairs


def test_split_sizes():
    pairs = _dummy_pairs(5, 5)
    train, val = split_train_val(pairs, fraction=0.3, seed=1)
    assert len(val) == 3 and len(train) == 7


def test_split_is_deterministic():
    pairs = _dummy_pairs(8, 8)
    a = split_train_val(pairs, fraction=0.3, seed=9)
    b = split_train_val(pairs, fraction=0.3, seed=9)
    assert [p.pair_id() for p in a[0]] == [p.pair_id() for p in b[0]]
    assert [p.pair_id() for p in a[1]] == [p.pair_id() for p in b[1]]


def test_split_partitions_input():
    pairs = _dummy_pairs(6, 6)
    train, val = split_train_val(pairs, fraction=0.25, seed=4)
    all_ids = {p.pair_id() for p in pairs}
    assert {p.pair_id() for p in train} | {p.pair_id() for p in val} == all_ids
    assert not ({p.pair_id() for p in train} & {p.pair_id() for p in val})


def test_split_stratification_within_one_pair():
    pairs = _dummy_pairs(10, 10)
    train, val = split_train_val(pairs, fraction=0.3, seed=2)
    global_ratio = 0.5
    for part in (train, val):
        n_mz = sum(1 for p in part if p.label == MZ)
        assert abs(n_mz - global_ratio * len(part)) <= 1


def test_paper_scale_split_arithmetic():
    pairs = _dummy_pairs(11907, 11907)
    train, val = split_train_val(pairs, fraction=0.3, seed=0)
    assert len(val) == 7144
    assert len(train) == 23814 - 7144


def test_bad_fraction_rejected():
    with pytest.raises(ValueError):
        split_train_val(_dummy_pairs(2, 2), fraction=1.0, seed=0)


# ---------------------------------------------------------------------------
# pair file IO
# ---------------------------------------------------------------------------


def test_pair_file_round_trip(tmp_path):
    manifest = toy_manifest()
    pairs = build_train_pairs(manifest, seed=13)
    out = tmp_path / "pairs.csv"
    write_pairs(out, pairs, seed=13)
    text = out.read_text()
    assert text.startswith("# seed=13\n")
    loaded = read_pairs(out, manifest)
    assert [(p.a.path, p.b.path, p.label, p.kind) for p in loaded] == [
        (p.a.path, p.b.path, p.label, p.kind) for p in pairs
    ]


def test_pair_file_byte_determinism(tmp_path):
    manifest = toy_manifest()
    for name in ("one.csv", "two.csv"):
        write_pairs(tmp_path / name, build_train_pairs(manifest, seed=21), seed=21)
    assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "two.csv").read_bytes()
