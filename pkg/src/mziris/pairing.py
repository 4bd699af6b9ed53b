"""Balanced MZ/NMZ pair construction and the seeded train/validation split.

Training positives pair the left and right eyes of one subject across
different session dates (synthetic MZ); test positives pair the left eye of
one twin with the right eye of the other (natural MZ). Negatives are
cross-subject left/right pairs sampled uniformly without replacement, always
in equal number to the positives.
"""

from __future__ import annotations

import csv
import os
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InsufficientNegatives, NoTwinGroups
from .manifest import ImageRecord

MZ = 1
NMZ = 0

# Above this eligible-pool size, negatives are drawn by seeded rejection
# sampling instead of materializing the full cross product.
MATERIALIZE_LIMIT = 500_000


@dataclass(frozen=True)
class PairRecord:
    """An ordered (a, b) image pair with its MZ/NMZ label and provenance."""

    a: ImageRecord
    b: ImageRecord
    label: int  # MZ=1, NMZ=0
    kind: str  # "synthetic" or "natural"

    def pair_id(self) -> str:
        return f"{self.a.path}|{self.b.path}"


def _negatives_without_twins(a: ImageRecord, b: ImageRecord) -> bool:
    if a.subject_id == b.subject_id:
        return False
    if a.twin_group is not None and a.twin_group == b.twin_group:
        return False
    return True


def _eligible_pool_size(lefts: Sequence[ImageRecord], rights: Sequence[ImageRecord]) -> int:
    """Exact eligible cross-pool size by per-identity arithmetic."""
    total = len(lefts) * len(rights)
    r_by_subject: dict[str, int] = {}
    r_by_group: dict[str, int] = {}
    for b in rights:
        r_by_subject[b.subject_id] = r_by_subject.get(b.subject_id, 0) + 1
        if b.twin_group is not None:
            r_by_group[b.twin_group] = r_by_group.get(b.twin_group, 0) + 1
    for a in lefts:
        blocked = r_by_subject.get(a.subject_id, 0)
        if a.twin_group is not None:
            # Same-group, other-subject rights are also ineligible.
            blocked += r_by_group.get(a.twin_group, 0) - sum(
                1 for b in rights if b.subject_id == a.subject_id and b.twin_group == a.twin_group
            )
        total -= blocked
    return total


def _sample_negatives(
    lefts: Sequence[ImageRecord],
    rights: Sequence[ImageRecord],
    count: int,
    rng: random.Random,
    kind: str,
) -> list[PairRecord]:
    """Uniform sample without replacement from the eligible (L, R) cross pool."""
    pool_size = _eligible_pool_size(lefts, rights)
    if pool_size < count:
        raise InsufficientNegatives(
            f"need {count} negatives but only {pool_size} eligible cross-subject pairs"
        )
    if len(lefts) * len(rights) <= MATERIALIZE_LIMIT:
        pool = [
            (i, j)
            for i, a in enumerate(lefts)
            for j, b in enumerate(rights)
            if _negatives_without_twins(a, b)
        ]
        chosen = rng.sample(pool, count)
    else:
        chosen_set: set[tuple[int, int]] = set()
        while len(chosen_set) < count:
            i = rng.randrange(len(lefts))
            j = rng.randrange(len(rights))
            if (i, j) in chosen_set:
                continue
            if _negatives_without_twins(lefts[i], rights[j]):
                chosen_set.add((i, j))
        chosen = sorted(chosen_set)
    return [PairRecord(lefts[i], rights[j], NMZ, kind) for i, j in chosen]


def build_train_pairs(
    manifest: Sequence[ImageRecord],
    seed: int,
    max_pos_per_subject: int | None = None,
) -> list[PairRecord]:
    """Balanced synthetic-MZ training pairs from a quality-filtered manifest.

    Positives enumerate every same-subject L/R combination taken on strictly
    different dates (optionally capped per subject, sampled under the seed);
    an equal number of cross-subject L/R negatives is drawn uniformly without
    replacement. The combined list is shuffled deterministically.
    """
    rng = random.Random(seed)
    by_subject: dict[str, dict[str, list[ImageRecord]]] = {}
    for rec in manifest:
        by_subject.setdefault(rec.subject_id, {"L": [], "R": []})[rec.eye].append(rec)

    positives: list[PairRecord] = []
    for subject_id in sorted(by_subject):
        eyes = by_subject[subject_id]
        combos = [
            PairRecord(a, b, MZ, "synthetic")
            for a in eyes["L"]
            for b in eyes["R"]
            if a.session_date != b.session_date
        ]
        if max_pos_per_subject is not None and len(combos) > max_pos_per_subject:
            combos = rng.sample(combos, max_pos_per_subject)
        positives.extend(combos)

    lefts = [r for r in manifest if r.eye == "L"]
    rights = [r for r in manifest if r.eye == "R"]
    negatives = _sample_negatives(lefts, rights, len(positives), rng, "synthetic")

    pairs = positives + negatives
    rng.shuffle(pairs)
    return pairs


def build_test_pairs(manifest: Sequence[ImageRecord], seed: int) -> list[PairRecord]:
    """Balanced natural-MZ test pairs from a twin manifest.

    Positives pair the left eye of one twin with the right eye of the other,
    in both orientations, for every twin group; negatives are cross-group,
    cross-subject L/R pairs sampled under the seed.
    """
    if not manifest:
        return []
    groups: dict[str, list[str]] = {}
    for rec in manifest:
        if rec.twin_group is not None and rec.subject_id not in groups.setdefault(rec.twin_group, []):
            groups[rec.twin_group].append(rec.subject_id)
    if not groups:
        raise NoTwinGroups("manifest has no twin_group labels")

    rng = random.Random(seed)
    by_subject: dict[str, dict[str, list[ImageRecord]]] = {}
    for rec in manifest:
        by_subject.setdefault(rec.subject_id, {"L": [], "R": []})[rec.eye].append(rec)

    positives: list[PairRecord] = []
    for group in sorted(groups):
        members = sorted(groups[group])
        for a_subj in members:
            for b_subj in members:
                if a_subj == b_subj:
                    continue
                for a in by_subject[a_subj]["L"]:
                    for b in by_subject[b_subj]["R"]:
                        positives.append(PairRecord(a, b, MZ, "natural"))

    lefts = [r for r in manifest if r.eye == "L"]
    rights = [r for r in manifest if r.eye == "R"]
    negatives = _sample_negatives(lefts, rights, len(positives), rng, "natural")

    pairs = positives + negatives
    rng.shuffle(pairs)
    return pairs


def split_train_val(
    pairs: Sequence[PairRecord], fraction: float = 0.3, seed: int = 0
) -> tuple[list[PairRecord], list[PairRecord]]:
    """Disjoint stratified split; the validation side gets round(fraction*n).

    Stratification keeps each side's label balance within one pair of the
    global ratio. Deterministic for a fixed (pairs, fraction, seed).
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    pairs = list(pairs)
    n = len(pairs)
    n_val = round(fraction * n)
    rng = random.Random(seed)

    pos_idx = [i for i, p in enumerate(pairs) if p.label == MZ]
    neg_idx = [i for i, p in enumerate(pairs) if p.label == NMZ]
    rng.shuffle(pos_idx)
    rng.shuffle(neg_idx)

    n_val_pos = round(n_val * len(pos_idx) / n) if n else 0
    n_val_pos = min(n_val_pos, len(pos_idx))
    n_val_neg = n_val - n_val_pos
    if n_val_neg > len(neg_idx):  # degenerate manifests: spill back to positives
        n_val_pos += n_val_neg - len(neg_idx)
        n_val_neg = len(neg_idx)

    val_set = set(pos_idx[:n_val_pos] + neg_idx[:n_val_neg])
    train = [pairs[i] for i in range(n) if i not in val_set]
    val = [pairs[i] for i in range(n) if i in val_set]
    rng.shuffle(train)
    rng.shuffle(val)
    return train, val


# ---------------------------------------------------------------------------
# Pair file IO
# ---------------------------------------------------------------------------

PAIR_COLUMNS = ["a_path", "b_path", "label", "kind"]


def write_pairs(path: str | Path, pairs: Iterable[PairRecord], seed: int | None = None) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="", encoding="utf-8") as fh:
        if seed is not None:
            fh.write(f"# seed={seed}\n")
        writer = csv.writer(fh)
        writer.writerow(PAIR_COLUMNS)
        for p in pairs:
            writer.writerow([p.a.path, p.b.path, p.label, p.kind])
    os.replace(tmp, path)


def read_pairs(path: str | Path, manifest: Sequence[ImageRecord]) -> list[PairRecord]:
    """Load a pair CSV, resolving each path against the given manifest."""
    by_path = {r.path: r for r in manifest}
    out: list[PairRecord] = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = (line for line in fh if not line.startswith("#"))
        for row in csv.DictReader(rows):
            try:
                a = by_path[row["a_path"]]
                b = by_path[row["b_path"]]
            except KeyError as exc:
                raise KeyError(f"pair file references {exc} not present in manifest") from exc
            out.append(PairRecord(a, b, int(row["label"]), row["kind"]))
    return out
