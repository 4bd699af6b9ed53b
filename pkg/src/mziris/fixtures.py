"""Procedurally textured iris-style fixtures with known ground truth.

Real near-infrared iris datasets are access-restricted, so the desk-scale
suites run on synthetic eyes: a dark pupil disk, an iris annulus carrying a
per-identity angular-radial texture, and a brighter surround carrying a
per-identity low-frequency pattern. Identity textures are seeded, so two
views of the same identity are near-duplicates (separable from cross-identity
pairs by raw pixel statistics) while distinct identities differ strongly in
both the iris and non-iris regions.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np
from PIL import Image

from .manifest import ImageRecord, write_manifest
from .quality import IrisGeometry

IMAGE_SHAPE = (480, 640)  # rows, cols

PUPIL_LEVEL = 28.0
IRIS_LEVEL = 115.0
IRIS_AMPLITUDE = 38.0
SCLERA_LEVEL = 195.0
SCLERA_AMPLITUDE = 22.0


def make_disk_image(
    pupil_radius: float = 30.0,
    iris_radius: float = 100.0,
    center: tuple[float, float] = (320.0, 240.0),
    shape: tuple[int, int] = IMAGE_SHAPE,
    levels: tuple[float, float, float] = (PUPIL_LEVEL, 110.0, 200.0),
) -> np.ndarray:
    """Flat two-disk test image: dark pupil inside a lighter iris disk."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    d = np.hypot(xx - center[0], yy - center[1])
    img = np.full(shape, levels[2], dtype=np.float32)
    img[d <= iris_radius] = levels[1]
    img[d <= pupil_radius] = levels[0]
    return img.astype(np.uint8)


@dataclass(frozen=True)
class _IdentityTexture:
    """Seeded texture parameters shared by all images of one identity."""

    angular_freqs: np.ndarray
    radial_periods: np.ndarray
    iris_phases: np.ndarray
    iris_amps: np.ndarray
    surround_freqs: np.ndarray
    surround_phases: np.ndarray
    surround_amps: np.ndarray


def _identity_texture(identity_seed: int, twin_of: _IdentityTexture | None = None) -> _IdentityTexture:
    rng = np.random.default_rng(identity_seed)
    if twin_of is None:
        return _IdentityTexture(
            angular_freqs=rng.integers(4, 17, size=4).astype(np.float32),
            radial_periods=rng.uniform(8.0, 30.0, size=4).astype(np.float32),
            iris_phases=rng.uniform(0.0, 2 * np.pi, size=(4, 2)).astype(np.float32),
            iris_amps=rng.dirichlet(np.ones(4)).astype(np.float32),
            surround_freqs=rng.uniform(1 / 200.0, 1 / 60.0, size=(4, 2)).astype(np.float32)
            * rng.choice([-1.0, 1.0], size=(4, 2)),
            surround_phases=rng.uniform(0.0, 2 * np.pi, size=4).astype(np.float32),
            surround_amps=rng.dirichlet(np.ones(4)).astype(np.float32),
        )
    # A twin sibling: same structure, slightly perturbed phases and amplitudes.
    return _IdentityTexture(
        angular_freqs=twin_of.angular_freqs,
        radial_periods=twin_of.radial_periods,
        iris_phases=(twin_of.iris_phases + rng.normal(0.0, 0.12, size=(4, 2))).astype(np.float32),
        iris_amps=(twin_of.iris_amps * rng.uniform(0.93, 1.07, size=4)).astype(np.float32),
        surround_freqs=twin_of.surround_freqs,
        surround_phases=(twin_of.surround_phases + rng.normal(0.0, 0.12, size=4)).astype(
            np.float32
        ),
        surround_amps=(twin_of.surround_amps * rng.uniform(0.93, 1.07, size=4)).astype(np.float32),
    )


def render_iris_image(
    texture: _IdentityTexture,
    geometry: IrisGeometry,
    view_seed: int,
    shape: tuple[int, int] = IMAGE_SHAPE,
    noise_sigma: float = 2.0,
    occlusion: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Render one eye image and its binary iris mask (1 = iris annulus).

    ``occlusion`` covers that fraction of the iris's vertical extent with an
    eyelid-like band from above; the mask excludes occluded pixels.
    """
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    d_pupil = np.hypot(xx - geometry.pupil_center[0], yy - geometry.pupil_center[1])
    d_iris = np.hypot(xx - geometry.iris_center[0], yy - geometry.iris_center[1])
    theta = np.arctan2(yy - geometry.iris_center[1], xx - geometry.iris_center[0])

    surround = np.zeros(shape, np.float32)
    for k in range(4):
        fx, fy = texture.surround_freqs[k]
        surround += texture.surround_amps[k] * np.sin(
            2 * np.pi * (fx * xx + fy * yy) + texture.surround_phases[k]
        )

    iris_tex = np.zeros(shape, np.float32)
    for k in range(4):
        iris_tex += texture.iris_amps[k] * np.sin(
            texture.angular_freqs[k] * theta + texture.iris_phases[k, 0]
        ) * np.sin(2 * np.pi * d_iris / texture.radial_periods[k] + texture.iris_phases[k, 1])

    img = SCLERA_LEVEL + SCLERA_AMPLITUDE * surround
    in_iris = d_iris <= geometry.iris_radius
    in_pupil = d_pupil <= geometry.pupil_radius
    img = np.where(in_iris, IRIS_LEVEL + IRIS_AMPLITUDE * iris_tex, img)
    img = np.where(in_pupil, PUPIL_LEVEL, img)

    mask = (in_iris & ~in_pupil).astype(np.uint8)
    if occlusion > 0.0:
        lid_y = geometry.iris_center[1] - geometry.iris_radius * (1.0 - 2.0 * occlusion)
        lid = yy < lid_y
        img = np.where(lid, 60.0, img)
        mask[lid] = 0

    rng = np.random.default_rng(view_seed)
    img = img + rng.normal(0.0, noise_sigma, shape)
    return np.clip(img, 0, 255).astype(np.uint8), mask


def _save_png(path: Path, array: np.ndarray) -> None:
    Image.fromarray(array, mode="L").save(path)


@dataclass
class FixtureSet:
    """Paths and ground truth for one generated manifest."""

    manifest_path: Path
    records: list[ImageRecord]
    geometry: dict[str, IrisGeometry]  # image path -> construction geometry

    def geometry_sidecar(self) -> Path:
        return self.manifest_path.with_name(self.manifest_path.stem + "_geometry.json")


def _write_geometry_sidecar(fixture: FixtureSet) -> None:
    payload = {
        path: {
            "pupil_center": list(g.pupil_center),
            "pupil_radius": g.pupil_radius,
            "iris_center": list(g.iris_center),
            "iris_radius": g.iris_radius,
        }
        for path, g in fixture.geometry.items()
    }
    fixture.geometry_sidecar().write_text(json.dumps(payload, indent=1), encoding="utf-8")


def load_geometry_sidecar(path: str | Path) -> dict[str, IrisGeometry]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return {
        img_path: IrisGeometry(
            pupil_center=tuple(g["pupil_center"]),
            pupil_radius=g["pupil_radius"],
            iris_center=tuple(g["iris_center"]),
            iris_radius=g["iris_radius"],
            source="annotated",
        )
        for img_path, g in payload.items()
    }


def _geometry_for(
    rng: np.random.Generator,
    jitter: float,
    ratio: float,
    shape: tuple[int, int] = IMAGE_SHAPE,
) -> IrisGeometry:
    h, w = shape
    cx = w / 2.0 + (rng.uniform(-jitter, jitter) if jitter else 0.0)
    cy = h / 2.0 + (rng.uniform(-jitter, jitter) if jitter else 0.0)
    iris_r = 100.0 + (rng.uniform(-8.0, 8.0) if jitter else 0.0)
    off = rng.uniform(-2.0, 2.0, size=2) if jitter else np.zeros(2)
    return IrisGeometry(
        pupil_center=(cx + float(off[0]), cy + float(off[1])),
        pupil_radius=ratio * iris_r,
        iris_center=(cx, cy),
        iris_radius=iris_r,
        source="annotated",
    )


def generate_image_set(
    out_dir: str | Path,
    subjects: int,
    sessions: int,
    seed: int,
    name: str = "train",
    twin_groups: int = 0,
    jitter: float = 6.0,
    dilation_spread: float = 0.12,
    start_date: date = date(2020, 1, 1),
    noise_sigma: float = 2.0,
) -> FixtureSet:
    """Generate images, masks, and a manifest CSV under ``out_dir``.

    Plain subjects are named s01.., twin pairs t01a/t01b.. (both members
    share a twin_group and a near-identical texture). Every subject gets L
    and R images for each session date; pupil dilation varies per session
    within ``dilation_spread`` of the subject's base ratio.
    """
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    # View noise is seeded separately per set name so that two sets built from
    # the same seed share identities and geometry but not per-image noise.
    view_rng = np.random.default_rng([seed, zlib.crc32(name.encode())])

    identities: list[tuple[str, str | None, _IdentityTexture]] = []
    for i in range(subjects):
        identities.append((f"s{i + 1:02d}", None, _identity_texture(int(rng.integers(2**31)))))
    for t in range(twin_groups):
        group = f"t{t + 1:02d}"
        tex_a = _identity_texture(int(rng.integers(2**31)))
        tex_b = _identity_texture(int(rng.integers(2**31)), twin_of=tex_a)
        identities.append((group + "a", group, tex_a))
        identities.append((group + "b", group, tex_b))

    records: list[ImageRecord] = []
    geometry: dict[str, IrisGeometry] = {}
    for subject_id, twin_group, texture in identities:
        base_ratio = float(rng.uniform(0.3, 0.55))
        for s in range(sessions):
            session_date = start_date + timedelta(days=s)
            ratio = float(
                np.clip(base_ratio + (rng.uniform(-dilation_spread, dilation_spread) if dilation_spread else 0.0), 0.22, 0.68)
            )
            for eye in ("L", "R"):
                g = _geometry_for(rng, jitter, ratio)
                img, mask = render_iris_image(
                    texture, g, view_seed=int(view_rng.integers(2**31)), noise_sigma=noise_sigma
                )
                stem = f"{subject_id}_{eye}_{session_date.isoformat()}"
                img_path = img_dir / f"{stem}.png"
                mask_path = img_dir / f"{stem}_mask.png"
                _save_png(img_path, img)
                _save_png(mask_path, mask * 255)
                records.append(
                    ImageRecord(
                        subject_id=subject_id,
                        eye=eye,
                        session_date=session_date,
                        path=str(img_path),
                        mask_path=str(mask_path),
                        twin_group=twin_group,
                    )
                )
                geometry[str(img_path)] = g

    manifest_path = out_dir / f"{name}_manifest.csv"
    write_manifest(manifest_path, records)
    fixture = FixtureSet(manifest_path=manifest_path, records=records, geometry=geometry)
    _write_geometry_sidecar(fixture)
    return fixture


def generate_overfit_set(out_dir: str | Path, seed: int = 7) -> tuple[FixtureSet, FixtureSet]:
    """Two disjoint-date manifests over the same 8 identities.

    Geometry is fixed and identical for every image (no jitter, constant
    dilation), so the identity signal is purely textural and the masks align
    pixel-for-pixel. The first set (2 dates) yields 32 balanced training
    pairs; the second (2 later dates) supplies held-out validation pairs.
    """
    out_dir = Path(out_dir)
    train = generate_image_set(
        out_dir / "train",
        subjects=8,
        sessions=2,
        seed=seed,
        name="overfit_train",
        jitter=0.0,
        dilation_spread=0.0,
        start_date=date(2020, 1, 1),
    )
    val = generate_image_set(
        out_dir / "val",
        subjects=8,
        sessions=2,
        seed=seed,  # same seed -> same identity textures and geometry
        name="overfit_val",
        jitter=0.0,
        dilation_spread=0.0,
        start_date=date(2020, 2, 1),
    )
    return train, val
