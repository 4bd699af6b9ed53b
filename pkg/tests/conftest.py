"""Shared fixtures for the desk-scale suites."""

from __future__ import annotations

from datetime import date

import numpy as np
import pytest

from mziris.fixtures import generate_image_set, generate_overfit_set
from mziris.manifest import ImageRecord
from mziris.quality import QualityReport


def make_record(
    subject: str,
    eye: str,
    day: int,
    twin_group: str | None = None,
    path: str | None = None,
    overall: int | None = None,
) -> ImageRecord:
    """In-memory record; path defaults to a unique synthetic name."""
    session = date(2021, 1, day)
    return ImageRecord(
        subject_id=subject,
        eye=eye,
        session_date=session,
        path=path or f"{subject}_{eye}_{session.isoformat()}.png",
        overall_quality=overall,
        twin_group=twin_group,
    )


def report_with_overall(overall: int) -> QualityReport:
    """A structurally valid report pinned to a given overall score."""
    if overall == 255:
        return QualityReport.failed()
    return QualityReport(
        usable_iris_area=1.0,
        iris_sclera_contrast=float(overall),
        iris_pupil_contrast=float(overall),
        pupil_circularity=0.9,
        grayscale_utilization=6.0,
        iris_radius_px=100.0,
        pupil_iris_ratio=0.4,
        concentricity=0.95,
        margin_adequacy=1.0,
        sharpness=60.0,
        motion_blur=90.0,
        overall=overall,
    )


@pytest.fixture(scope="session")
def small_fixture_set(tmp_path_factory):
    """4 plain subjects + 2 twin groups, 2 sessions each, with jitter."""
    out = tmp_path_factory.mktemp("fixture_small")
    return generate_image_set(out, subjects=4, sessions=2, seed=11, twin_groups=2)


@pytest.fixture(scope="session")
def overfit_sets(tmp_path_factory):
    """The fixed-geometry separable train/val manifests (32 images each)."""
    out = tmp_path_factory.mktemp("fixture_overfit")
    return generate_overfit_set(out, seed=7)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
