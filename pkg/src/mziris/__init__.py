"""Monozygotic iris-pair verification pipeline."""

__version__ = "0.1.0"

from .encoder import EncoderConfig, LossConfig, batch_loss, contrastive_loss, distance
from .manifest import ImageRecord, read_manifest, write_manifest
from .pairing import PairRecord, build_test_pairs, build_train_pairs, split_train_val
from .preprocess import InputVariant
from .quality import IrisGeometry, QualityReport, compute_quality, filter_manifest, fit_geometry
from .trainer import OptimizerConfig, TrainConfig

__all__ = [
    "EncoderConfig",
    "ImageRecord",
    "InputVariant",
    "IrisGeometry",
    "LossConfig",
    "OptimizerConfig",
    "PairRecord",
    "QualityReport",
    "TrainConfig",
    "batch_loss",
    "build_test_pairs",
    "build_train_pairs",
    "compute_quality",
    "contrastive_loss",
    "distance",
    "filter_manifest",
    "fit_geometry",
    "read_manifest",
    "split_train_val",
    "write_manifest",
]
