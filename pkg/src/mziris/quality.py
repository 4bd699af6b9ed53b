"""Iris image quality metrics and manifest screening.

Eleven component metrics are computed per image (usable area, two
contrasts, pupil circularity, grayscale utilization, iris radius,
pupil-iris ratio, concentricity, margin adequacy, sharpness, motion
blur). Each maps to a sub-score in [0, 100]; the overall score is the
floored mean of the sub-scores, with 255 reserved as the sentinel for
any component computation failure. Manifests are screened by rejecting
entries with overall below a threshold (default 50) or equal to 255.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import cv2
import numpy as np

from .errors import GeometryNotFound, MissingQuality
from .manifest import ImageRecord

FAILURE_SENTINEL = 255

# Sub-score mapping constants. Radius target and dilation band follow common
# capture guidance for 640x480 near-infrared sensors; sharpness reference is
# the Laplacian variance at which the sub-score reaches 50.
MIN_GOOD_IRIS_RADIUS = 80.0
DILATION_BAND = (0.2, 0.7)
SHARPNESS_REF = 100.0
ENTROPY_MAX_BITS = 8.0


class ComponentFailure(Exception):
    """Internal: a single metric could not be computed."""


@dataclass(frozen=True)
class IrisGeometry:
    """Fitted or annotated pupil/iris circles, in pixel coordinates."""

    pupil_center: tuple[float, float]
    pupil_radius: float
    iris_center: tuple[float, float]
    iris_radius: float
    source: str = "fitted"  # "annotated" or "fitted"

    def __post_init__(self) -> None:
        if not (0 < self.pupil_radius < self.iris_radius):
            raise ValueError(
                f"need 0 < pupil_radius < iris_radius, got {self.pupil_radius}, {self.iris_radius}"
            )
        if self.source not in ("annotated", "fitted"):
            raise ValueError(f"bad geometry source {self.source!r}")

    def validate_bounds(self, shape: tuple[int, int]) -> None:
        h, w = shape
        for cx, cy in (self.pupil_center, self.iris_center):
            if not (0 <= cx < w and 0 <= cy < h):
                raise ValueError(f"center ({cx}, {cy}) outside {w}x{h} image")


@dataclass
class QualityReport:
    """The eleven component metrics plus the aggregated overall score.

    Component fields are None when that component failed; overall is 255
    iff at least one component failed.
    """

    usable_iris_area: float | None
    iris_sclera_contrast: float | None
    iris_pupil_contrast: float | None
    pupil_circularity: float | None
    grayscale_utilization: float | None
    iris_radius_px: float | None
    pupil_iris_ratio: float | None
    concentricity: float | None
    margin_adequacy: float | None
    sharpness: float | None
    motion_blur: float | None
    overall: int

    FIELDS = (
        "usable_iris_area",
        "iris_sclera_contrast",
        "iris_pupil_contrast",
        "pupil_circularity",
        "grayscale_utilization",
        "iris_radius_px",
        "pupil_iris_ratio",
        "concentricity",
        "margin_adequacy",
        "sharpness",
        "motion_blur",
    )

    def to_dict(self) -> dict:
        d = {name: getattr(self, name) for name in self.FIELDS}
        d["overall"] = self.overall
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QualityReport":
        return cls(**{name: d.get(name) for name in cls.FIELDS}, overall=int(d["overall"]))

    @classmethod
    def failed(cls) -> "QualityReport":
        return cls(*([None] * len(cls.FIELDS)), overall=FAILURE_SENTINEL)


def pupil_iris_ratio(g: IrisGeometry) -> float:
    """Pupil diameter over iris diameter, in (0, 1)."""
    return (2.0 * g.pupil_radius) / (2.0 * g.iris_radius)


# ---------------------------------------------------------------------------
# Geometry fitting
# ---------------------------------------------------------------------------


def _circular_profile(img: np.ndarray, cx: float, cy: float, radii: np.ndarray) -> np.ndarray:
    """Mean intensity along circles of the given radii (bilinear sampling)."""
    h, w = img.shape
    angles = np.linspace(0.0, 2.0 * np.pi, 96, endpoint=False)
    cos_a, sin_a = np.cos(angles), np.sin(angles)
    xs = cx + np.outer(radii, cos_a)
    ys = cy + np.outer(radii, sin_a)
    xs = np.clip(xs, 0, w - 1.001)
    ys = np.clip(ys, 0, h - 1.001)
    x0 = xs.astype(np.int32)
    y0 = ys.astype(np.int32)
    fx = xs - x0
    fy = ys - y0
    v = (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x0 + 1] * fx * (1 - fy)
        + img[y0 + 1, x0] * (1 - fx) * fy
        + img[y0 + 1, x0 + 1] * fx * fy
    )
    return v.mean(axis=1)


def _edge_response(profile: np.ndarray) -> np.ndarray:
    """Smoothed outward radial derivative of a circular intensity profile."""
    grad = np.gradient(profile)
    kernel = np.array([0.25, 0.5, 0.25])
    return np.convolve(grad, kernel, mode="same")


def _best_radius(
    img: np.ndarray, cx: float, cy: float, r_lo: float, r_hi: float
) -> tuple[float, float]:
    """Radius in [r_lo, r_hi] with the strongest dark-to-bright edge."""
    radii = np.arange(max(2.0, r_lo), r_hi)
    if len(radii) < 5:
        raise GeometryNotFound("radius search range too narrow")
    response = _edge_response(_circular_profile(img, cx, cy, radii))
    # Ends of the derivative are edge artifacts of np.gradient.
    response[0] = response[-1] = -np.inf
    idx = int(np.argmax(response))
    return float(radii[idx]), float(response[idx])


def _refine_center(
    img: np.ndarray, cx: float, cy: float, r_lo: float, r_hi: float, span: int = 4
) -> tuple[float, float, float, float]:
    """Grid-search a small neighborhood for the sharpest circular edge."""
    best = (-np.inf, cx, cy, r_lo)
    for dy in range(-span, span + 1, 2):
        for dx in range(-span, span + 1, 2):
            try:
                r, strength = _best_radius(img, cx + dx, cy + dy, r_lo, r_hi)
            except GeometryNotFound:
                continue
            if strength > best[0]:
                best = (strength, cx + dx, cy + dy, r)
    strength, bx, by, br = best
    if not np.isfinite(strength):
        raise GeometryNotFound("no circular edge in search window")
    return bx, by, br, strength


MIN_EDGE_STRENGTH = 1.5  # 8-bit intensity levels per pixel of radius
PUPIL_IRIS_RATIO_RANGE = (0.15, 0.9)  # plausible fitted-pair radius ratios


def _boundary_pair(response: np.ndarray, radii: np.ndarray) -> tuple[float, float]:
    """The two strongest well-separated edge radii with a plausible ratio."""
    order = np.argsort(response)[::-1]
    candidates: list[int] = []
    for i in order:
        if not np.isfinite(response[i]) or response[i] < MIN_EDGE_STRENGTH:
            break
        if all(abs(radii[i] - radii[j]) > 6.0 for j in candidates):
            candidates.append(int(i))
        if len(candidates) >= 6:
            break
    best: tuple[float, float, float] | None = None  # (combined strength, r_small, r_large)
    for a in candidates:
        for b in candidates:
            r_small, r_large = radii[a], radii[b]
            if r_small >= r_large:
                continue
            ratio = r_small / r_large
            if not (PUPIL_IRIS_RATIO_RANGE[0] < ratio < PUPIL_IRIS_RATIO_RANGE[1]):
                continue
            combined = float(response[a] + response[b])
            if best is None or combined > best[0]:
                best = (combined, float(r_small), float(r_large))
    if best is None:
        raise GeometryNotFound("no plausible pupil/iris boundary pair")
    return best[1], best[2]


def fit_geometry(image: np.ndarray, annotation: IrisGeometry | None = None) -> IrisGeometry:
    """Locate the pupil and iris circles.

    Returns the annotation verbatim when one is provided. Otherwise runs a
    gradient-based circular boundary search: the pupil center is seeded from
    the darkest-pixel centroid, the two boundaries are the strongest
    well-separated outward dark-to-bright intensity steps, and each circle is
    refined with a small center search.

    Raises GeometryNotFound when the image has no plausible circle pair.
    """
    if annotation is not None:
        if annotation.source != "annotated":
            annotation = IrisGeometry(
                annotation.pupil_center,
                annotation.pupil_radius,
                annotation.iris_center,
                annotation.iris_radius,
                source="annotated",
            )
        return annotation

    if image.ndim != 2 or image.size == 0:
        raise GeometryNotFound("expected a nonempty single-channel image")
    img = cv2.GaussianBlur(image.astype(np.float32), (5, 5), 1.5)
    h, w = img.shape

    lo, hi = np.percentile(img, [2, 98])
    if hi - lo < 5.0:
        raise GeometryNotFound("image has no usable intensity range")

    # Seed the center from the centroid of the darkest twentieth.
    dark = img <= np.percentile(img, 5)
    ys, xs = np.nonzero(dark)
    cx0, cy0 = float(xs.mean()), float(ys.mean())

    max_r = min(h, w) / 2.0 - 2.0
    radii = np.arange(8.0, max_r)
    response = _edge_response(_circular_profile(img, cx0, cy0, radii))
    response[0] = response[-1] = -np.inf
    pr0, ir0 = _boundary_pair(response, radii)

    px, py, pr, p_strength = _refine_center(img, cx0, cy0, max(8.0, pr0 - 8.0), pr0 + 8.0)
    if p_strength < MIN_EDGE_STRENGTH:
        raise GeometryNotFound("pupil boundary too weak")

    ix, iy, ir, i_strength = _refine_center(
        img, px, py, max(pr * 1.15, ir0 - 10.0), ir0 + 10.0
    )
    if i_strength < MIN_EDGE_STRENGTH:
        raise GeometryNotFound("iris boundary too weak")
    if not (0 <= px < w and 0 <= py < h and 0 <= ix < w and 0 <= iy < h):
        raise GeometryNotFound("fitted centers out of bounds")
    if not pr < ir:
        raise GeometryNotFound("refined radii are not nested")

    return IrisGeometry((px, py), pr, (ix, iy), ir, source="fitted")


# ---------------------------------------------------------------------------
# Component metrics
# ---------------------------------------------------------------------------


def _region_masks(shape: tuple[int, int], g: IrisGeometry) -> dict[str, np.ndarray]:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    d_pupil = np.hypot(xx - g.pupil_center[0], yy - g.pupil_center[1])
    d_iris = np.hypot(xx - g.iris_center[0], yy - g.iris_center[1])
    pupil = d_pupil <= 0.8 * g.pupil_radius
    annulus = (d_iris <= 0.9 * g.iris_radius) & (d_pupil >= 1.15 * g.pupil_radius)
    sclera = (d_iris >= 1.05 * g.iris_radius) & (d_iris <= 1.3 * g.iris_radius)
    return {"pupil": pupil, "annulus": annulus, "sclera": sclera}


def _region_median(image: np.ndarray, region: np.ndarray, name: str) -> float:
    vals = image[region]
    if vals.size < 16:
        raise ComponentFailure(f"{name} region too small to sample")
    return float(np.median(vals))


def _weber_contrast_score(brighter: float, darker: float) -> float:
    contrast = (brighter - darker) / max(darker, 1.0)
    return 100.0 * min(max(contrast, 0.0), 1.0)


def _pupil_circularity(image: np.ndarray, g: IrisGeometry, regions: dict) -> float:
    """4*pi*area/perimeter^2 of the thresholded pupil blob."""
    med_pupil = _region_median(image, regions["pupil"], "pupil")
    med_iris = _region_median(image, regions["annulus"], "iris annulus")
    if med_iris <= med_pupil:
        raise ComponentFailure("pupil is not darker than iris")
    thresh = 0.5 * (med_pupil + med_iris)
    inside_iris = np.hypot(
        np.mgrid[0 : image.shape[0], 0 : image.shape[1]][1] - g.iris_center[0],
        np.mgrid[0 : image.shape[0], 0 : image.shape[1]][0] - g.iris_center[1],
    ) <= g.iris_radius
    blob = ((image < thresh) & inside_iris).astype(np.uint8)
    contours, _ = cv2.findContours(blob, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    if not contours:
        raise ComponentFailure("no pupil blob found")
    contour = max(contours, key=cv2.contourArea)
    area = cv2.contourArea(contour)
    perimeter = cv2.arcLength(contour, closed=True)
    if perimeter <= 0 or area <= 0:
        raise ComponentFailure("degenerate pupil contour")
    return min(4.0 * math.pi * area / perimeter**2, 1.0)


def _grayscale_entropy(image: np.ndarray) -> float:
    hist = np.bincount(image.reshape(-1), minlength=256).astype(np.float64)
    p = hist / hist.sum()
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())


def _margin_adequacy(shape: tuple[int, int], g: IrisGeometry) -> float:
    h, w = shape
    cx, cy = g.iris_center
    r = g.iris_radius
    margin = min(cx - r, (w - 1) - (cx + r), cy - r, (h - 1) - (cy + r))
    return min(max(margin / r, 0.0), 1.0)


def _sharpness(image: np.ndarray) -> float:
    lap_var = float(cv2.Laplacian(image, cv2.CV_64F).var())
    return 100.0 * lap_var / (lap_var + SHARPNESS_REF)


def _motion_blur(image: np.ndarray) -> float:
    """Directional-gradient anisotropy: 100 = isotropic (no motion streaking)."""
    gx = cv2.Sobel(image, cv2.CV_64F, 1, 0, ksize=3)
    gy = cv2.Sobel(image, cv2.CV_64F, 0, 1, ksize=3)
    jxx = float((gx * gx).mean())
    jyy = float((gy * gy).mean())
    jxy = float((gx * gy).mean())
    total = jxx + jyy
    if total <= 0:
        raise ComponentFailure("image has no gradient energy")
    # Structure-tensor eigenvalue spread; 0 for isotropic, 1 for a pure streak.
    spread = math.hypot(jxx - jyy, 2.0 * jxy) / total
    return 100.0 * (1.0 - spread)


def _dilation_subscore(ratio: float) -> float:
    lo, hi = DILATION_BAND
    if lo <= ratio <= hi:
        return 100.0
    if ratio < lo:
        return 100.0 * ratio / lo
    return 100.0 * (1.0 - ratio) / (1.0 - hi)


def compute_quality(
    image: np.ndarray, g: IrisGeometry, mask: np.ndarray | None = None
) -> QualityReport:
    """Compute all eleven component metrics and the overall score.

    Any component failure yields the 255 sentinel with the failed components
    reported as None; successful components keep their values.
    """
    if image.dtype != np.uint8:
        image = np.clip(image, 0, 255).astype(np.uint8)
    regions = _region_masks(image.shape, g)

    values: dict[str, float | None] = {}
    subscores: dict[str, float | None] = {}

    def compute(name: str, fn, to_subscore):
        try:
            v = fn()
            if v is None or not np.isfinite(v):
                raise ComponentFailure(f"{name} is not finite")
            values[name] = float(v)
            subscores[name] = float(to_subscore(v))
        except ComponentFailure:
            values[name] = None
            subscores[name] = None

    def usable_area() -> float:
        if mask is None:
            return 1.0
        if mask.shape != image.shape:
            raise ComponentFailure("mask shape differs from image")
        annulus = regions["annulus"]
        total = int(annulus.sum())
        if total == 0:
            raise ComponentFailure("iris annulus is empty")
        return float((mask[annulus] > 0).sum()) / total

    def sclera_contrast() -> float:
        med_iris = _region_median(image, regions["annulus"], "iris annulus")
        med_sclera = _region_median(image, regions["sclera"], "sclera")
        return _weber_contrast_score(med_sclera, med_iris)

    def pupil_contrast() -> float:
        med_pupil = _region_median(image, regions["pupil"], "pupil")
        med_iris = _region_median(image, regions["annulus"], "iris annulus")
        return _weber_contrast_score(med_iris, med_pupil)

    compute("usable_iris_area", usable_area, lambda v: v * 100.0)
    compute("iris_sclera_contrast", sclera_contrast, lambda v: v)
    compute("iris_pupil_contrast", pupil_contrast, lambda v: v)
    compute("pupil_circularity", lambda: _pupil_circularity(image, g, regions), lambda v: v * 100.0)
    compute(
        "grayscale_utilization",
        lambda: _grayscale_entropy(image),
        lambda v: 100.0 * min(v / ENTROPY_MAX_BITS, 1.0),
    )
    compute(
        "iris_radius_px",
        lambda: g.iris_radius,
        lambda v: 100.0 * min(v / MIN_GOOD_IRIS_RADIUS, 1.0),
    )
    compute("pupil_iris_ratio", lambda: pupil_iris_ratio(g), _dilation_subscore)
    compute(
        "concentricity",
        lambda: max(
            0.0,
            1.0
            - math.dist(g.pupil_center, g.iris_center) / g.iris_radius,
        ),
        lambda v: v * 100.0,
    )
    compute("margin_adequacy", lambda: _margin_adequacy(image.shape, g), lambda v: v * 100.0)
    compute("sharpness", lambda: _sharpness(image), lambda v: v)
    compute("motion_blur", lambda: _motion_blur(image), lambda v: v)

    if any(v is None for v in subscores.values()):
        overall = FAILURE_SENTINEL
    else:
        overall = int(math.floor(sum(subscores.values()) / len(subscores)))
    return QualityReport(**values, overall=overall)


def quality_report_for_image(
    image: np.ndarray,
    annotation: IrisGeometry | None = None,
    mask: np.ndarray | None = None,
) -> tuple[QualityReport, IrisGeometry | None]:
    """Full per-image pipeline: fit geometry, then score.

    Geometry failure is not an error at this level; it produces the 255
    sentinel report, which screening rejects.
    """
    try:
        g = fit_geometry(image, annotation)
    except GeometryNotFound:
        return QualityReport.failed(), None
    return compute_quality(image, g, mask=mask), g


# ---------------------------------------------------------------------------
# Screening
# ---------------------------------------------------------------------------


def filter_manifest(
    entries: Sequence[ImageRecord], threshold: int = 50
) -> tuple[list[ImageRecord], list[tuple[ImageRecord, str]]]:
    """Partition entries into (kept, rejected-with-reason) by overall score.

    An entry is rejected iff its overall score is strictly below the
    threshold or equal to the 255 failure sentinel; a score exactly at the
    threshold is kept. Order is preserved within both lists.
    """
    kept: list[ImageRecord] = []
    rejected: list[tuple[ImageRecord, str]] = []
    for rec in entries:
        overall = rec.overall()
        if overall is None:
            raise MissingQuality(f"{rec.path} has no quality score")
        if overall == FAILURE_SENTINEL:
            rejected.append((rec, "overall=255 (computation failure)"))
        elif overall < threshold:
            rejected.append((rec, f"overall={overall} < {threshold}"))
        else:
            kept.append(rec)
    return kept, rejected
