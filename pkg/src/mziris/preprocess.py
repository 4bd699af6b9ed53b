"""Image loading, mask-based input variants, and encoder input conversion."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, DimensionMismatch, MissingMask, SizeMismatch
from .manifest import ImageRecord

log = logging.getLogger(__name__)

EXPECTED_SHAPE = (480, 640)  # rows, cols

# Channel statistics matching the pretrained backbone's training convention.
IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class InputVariant(enum.Enum):
    ORIGINAL = "original"
    IRIS_ONLY = "iris_only"
    NON_IRIS_ONLY = "non_iris_only"


@dataclass
class ModelInput:
    """Normalized H x W x 3 float array ready for the encoder."""

    values: np.ndarray
    source_path: str
    variant: InputVariant


def load_image(path: str | Path, allow_resize: bool = False) -> np.ndarray:
    """Load a single-channel 8-bit raster, enforcing 640x480.

    Other sizes raise SizeMismatch unless ``allow_resize`` is set, in which
    case the image is bilinearly resized to 640x480 with a logged warning.
    """
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.uint8)
    except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    if arr.shape != EXPECTED_SHAPE:
        if not allow_resize:
            raise SizeMismatch(
                f"{path}: got {arr.shape[1]}x{arr.shape[0]}, expected 640x480 "
                "(pass allow_resize to rescale)"
            )
        log.warning("resizing %s from %dx%d to 640x480", path, arr.shape[1], arr.shape[0])
        arr = cv2.resize(arr, (EXPECTED_SHAPE[1], EXPECTED_SHAPE[0]), interpolation=cv2.INTER_LINEAR)
    return arr


def load_mask(path: str | Path, expected_shape: tuple[int, int] = EXPECTED_SHAPE) -> np.ndarray:
    """Load a segmentation mask as a {0, 1} array (binarized at half intensity)."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"cannot decode mask {path}: {exc}") from exc
    if arr.shape != expected_shape:
        raise DimensionMismatch(
            f"mask {path} is {arr.shape[1]}x{arr.shape[0]}, image is "
            f"{expected_shape[1]}x{expected_shape[0]}"
        )
    return (arr >= 128).astype(np.uint8)


def apply_variant(
    image: np.ndarray, mask: np.ndarray | None, variant: InputVariant
) -> np.ndarray:
    """Produce the selected input variant from an image and its iris mask.

    iris_only zeroes everything outside the mask; non_iris_only zeroes the
    masked region. The two masked variants sum back to the original exactly.
    """
    if variant is InputVariant.ORIGINAL:
        return image
    if mask is None:
        raise MissingMask(f"{variant.value} requires a segmentation mask")
    if mask.shape != image.shape:
        raise DimensionMismatch(f"mask shape {mask.shape} != image shape {image.shape}")
    binary = (mask > 0).astype(image.dtype)
    if variant is InputVariant.IRIS_ONLY:
        return image * binary
    return image * (1 - binary)


def to_model_input(
    image: np.ndarray, variant: InputVariant, size: int = 224, source_path: str = ""
) -> ModelInput:
    """Resize to the encoder's square input, replicate to 3 channels, normalize."""
    resized = cv2.resize(image, (size, size), interpolation=cv2.INTER_LINEAR)
    scaled = resized.astype(np.float32) / 255.0
    stacked = np.repeat(scaled[:, :, None], 3, axis=2)
    values = (stacked - IMAGENET_MEAN) / IMAGENET_STD
    return ModelInput(values=values, source_path=source_path, variant=variant)


def load_variant_input(
    record: ImageRecord,
    variant: InputVariant,
    size: int = 224,
    allow_resize: bool = False,
) -> ModelInput:
    """Full per-record pipeline: load, apply the variant, convert."""
    image = load_image(record.path, allow_resize=allow_resize)
    mask = None
    if variant is not InputVariant.ORIGINAL:
        if record.mask_path is None:
            raise MissingMask(f"{record.path} has no mask_path for variant {variant.value}")
        mask = load_mask(record.mask_path, expected_shape=image.shape)
    arr = apply_variant(image, mask, variant)
    return to_model_input(arr, variant, size=size, source_path=record.path)
