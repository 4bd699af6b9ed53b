"""Fixture generator ground truth, determinism, and pair separability."""

from __future__ import annotations

import hashlib

import numpy as np
import pytest

from mziris.fixtures import (
    generate_image_set,
    load_geometry_sidecar,
    make_disk_image,
    render_iris_image,
    _identity_texture,
)
from mziris.manifest import read_manifest
from mziris.pairing import MZ, build_train_pairs
from mziris.preprocess import InputVariant, apply_variant, load_image, load_mask
from mziris.quality import IrisGeometry, compute_quality


def downsampled(img: np.ndarray, k: int = 16) -> np.ndarray:
    h, w = img.shape
    return img[: h - h % k, : w - w % k].reshape(k, h // k, k, w // k).mean(axis=(1, 3))


def pixel_correlation(a: np.ndarray, b: np.ndarray) -> float:
    fa = downsampled(a.astype(np.float64)).ravel()
    fb = downsampled(b.astype(np.float64)).ravel()
    fa -= fa.mean()
    fb -= fb.mean()
    denom = np.linalg.norm(fa) * np.linalg.norm(fb)
    if denom == 0:
        return 0.0
    return float(fa @ fb / denom)


def test_disk_image_levels():
    img = make_disk_image()
    assert img.shape == (480, 640)
    assert img[240, 320] == 28  # pupil core
    assert img[240, 320 + 60] == 110  # iris band
    assert img[10, 10] == 200  # background


def test_manifest_set_structure(small_fixture_set):
    records = read_manifest(small_fixture_set.manifest_path)
    # 4 plain subjects + 2 twin groups (4 twin subjects), 2 sessions, 2 eyes
    assert len(records) == (4 + 4) * 2 * 2
    assert sum(1 for r in records if r.twin_group) == 4 * 2 * 2
    subjects = {r.subject_id for r in records}
    assert {"s01", "t01a", "t01b", "t02a", "t02b"} <= subjects
    for rec in records[:4]:
        img = load_image(rec.path)
        mask = load_mask(rec.mask_path)
        assert img.shape == mask.shape == (480, 640)
        assert set(np.unique(mask)) <= {0, 1}


def test_geometry_sidecar_matches_rendered_content(small_fixture_set):
    geoms = load_geometry_sidecar(small_fixture_set.geometry_sidecar())
    rec = small_fixture_set.records[0]
    g = geoms[rec.path]
    img = load_image(rec.path)
    mask = load_mask(rec.mask_path)
    # The mask is exactly the annulus between the construction circles.
    yy, xx = np.mgrid[0:480, 0:640]
    d_iris = np.hypot(xx - g.iris_center[0], yy - g.iris_center[1])
    d_pupil = np.hypot(xx - g.pupil_center[0], yy - g.pupil_center[1])
    expected = ((d_iris <= g.iris_radius) & (d_pupil > g.pupil_radius)).astype(np.uint8)
    assert np.array_equal(mask, expected)
    assert img[int(g.pupil_center[1]), int(g.pupil_center[0])] < 60


def test_fixture_images_pass_quality_gate(small_fixture_set):
    geoms = load_geometry_sidecar(small_fixture_set.geometry_sidecar())
    for rec in small_fixture_set.records[:6]:
        img = load_image(rec.path)
        mask = load_mask(rec.mask_path)
        rep = compute_quality(img, geoms[rec.path], mask=mask)
        assert rep.overall != 255 and rep.overall >= 50


def test_generation_is_deterministic(tmp_path):
    a = generate_image_set(tmp_path / "a", subjects=2, sessions=1, seed=3)
    b = generate_image_set(tmp_path / "b", subjects=2, sessions=1, seed=3)
    for ra, rb in zip(a.records, b.records):
        ha = hashlib.sha256(open(ra.path, "rb").read()).hexdigest()
        hb = hashlib.sha256(open(rb.path, "rb").read()).hexdigest()
        assert ha == hb


def test_twins_are_near_duplicates_of_each_other(tmp_path):
    fx = generate_image_set(tmp_path, subjects=0, sessions=1, seed=9, twin_groups=1, jitter=0.0)
    by_subject = {}
    for rec in fx.records:
        by_subject.setdefault(rec.subject_id, []).append(rec)
    a = load_image(by_subject["t01a"][0].path)
    b = load_image(by_subject["t01b"][0].path)
    assert pixel_correlation(a, b) > 0.9


def test_overfit_pairs_are_linearly_separable_per_variant(overfit_sets):
    """Pre-training probe: raw pixel correlation must split MZ from NMZ
    with a clean margin under every input variant."""
    train, _ = overfit_sets
    records = read_manifest(train.manifest_path)
    pairs = build_train_pairs(records, seed=7)
    assert len(pairs) == 32
    assert sum(1 for p in pairs if p.label == MZ) == 16

    for variant in InputVariant:
        mz_scores, nmz_scores = [], []
        for pair in pairs:
            img_a = load_image(pair.a.path)
            img_b = load_image(pair.b.path)
            mask_a = load_mask(pair.a.mask_path) if variant is not InputVariant.ORIGINAL else None
            mask_b = load_mask(pair.b.mask_path) if variant is not InputVariant.ORIGINAL else None
            va = apply_variant(img_a, mask_a, variant)
            vb = apply_variant(img_b, mask_b, variant)
            score = pixel_correlation(va, vb)
            (mz_scores if pair.label == MZ else nmz_scores).append(score)
        assert min(mz_scores) > max(nmz_scores), (
            f"{variant.value}: MZ range [{min(mz_scores):.3f}, {max(mz_scores):.3f}] "
            f"overlaps NMZ max {max(nmz_scores):.3f}"
        )


def test_occlusion_band_removes_mask_rows():
    g = IrisGeometry((320.0, 240.0), 40.0, (320.0, 240.0), 100.0, source="annotated")
    _, mask_clear = render_iris_image(_identity_texture(1), g, view_seed=1)
    _, mask_occluded = render_iris_image(_identity_texture(1), g, view_seed=1, occlusion=0.4)
    assert mask_occluded.sum() < mask_clear.sum()
