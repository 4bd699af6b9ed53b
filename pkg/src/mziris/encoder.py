"""Twin-branch embedding model, pair distance, and contrastive loss.

One residual backbone with its classifier head replaced by a 128-unit linear
map embeds both images of a pair (shared weights by construction: the same
module embeds both branches). Similarity is the Euclidean distance between
the two embeddings; training minimizes the margin-based contrastive loss

    L = 1/2 * (y * D^2 + (1 - y) * max(0, m - D)^2)

with y=1 for MZ pairs and y=0 for NMZ pairs.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, EmptyBatch, LengthMismatch, ShapeMismatch

SUPPORTED_DEPTHS = (18, 34, 50, 101)

# "l2" is the standard Euclidean distance; "sqrt_l2" is its square root,
# selectable for comparison (see EncoderConfig.distance_mode).
DISTANCE_MODES = ("l2", "sqrt_l2")


@dataclass(frozen=True)
class EncoderConfig:
    backbone_depth: int = 18
    embedding_dim: int = 128
    pretrained: bool = False
    input_size: int = 224
    distance_mode: str = "l2"

    def __post_init__(self) -> None:
        if self.backbone_depth not in SUPPORTED_DEPTHS:
            raise ConfigError(f"backbone_depth must be one of {SUPPORTED_DEPTHS}")
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be >= 1")
        if self.distance_mode not in DISTANCE_MODES:
            raise ConfigError(f"distance_mode must be one of {DISTANCE_MODES}")


@dataclass(frozen=True)
class LossConfig:
    margin: float = 1.0

    def __post_init__(self) -> None:
        if self.margin <= 0:
            raise ConfigError("margin must be > 0")


def build_model(cfg: EncoderConfig) -> nn.Module:
    """Residual backbone with the classifier replaced by the embedding head.

    The head is a single fully connected map to ``embedding_dim`` units with
    no activation after it. With ``pretrained`` the backbone starts from
    ImageNet weights (requires the torchvision weight cache or network
    access); otherwise from the standard random initialization.
    """
    import torchvision.models as tvm

    factories = {18: tvm.resnet18, 34: tvm.resnet34, 50: tvm.resnet50, 101: tvm.resnet101}
    weights = None
    if cfg.pretrained:
        enums = {
            18: tvm.ResNet18_Weights.IMAGENET1K_V1,
            34: tvm.ResNet34_Weights.IMAGENET1K_V1,
            50: tvm.ResNet50_Weights.IMAGENET1K_V1,
            101: tvm.ResNet101_Weights.IMAGENET1K_V1,
        }
        weights = enums[cfg.backbone_depth]
    if cfg.pretrained:
        try:
            model = factories[cfg.backbone_depth](weights=weights)
        except Exception as exc:
            raise ConfigError(
                f"could not fetch pretrained resnet{cfg.backbone_depth} weights "
                f"(no torchvision cache and no network): {exc}"
            ) from exc
    else:
        model = factories[cfg.backbone_depth](weights=None)
    model.fc = nn.Linear(model.fc.in_features, cfg.embedding_dim)
    return model


def inputs_to_tensor(inputs: Sequence[np.ndarray], cfg: EncoderConfig) -> torch.Tensor:
    """Stack H x W x 3 arrays into an N x 3 x H x W float tensor, shape-checked."""
    expected = (cfg.input_size, cfg.input_size, 3)
    for arr in inputs:
        if arr.shape != expected:
            raise ShapeMismatch(f"input shape {arr.shape} != expected {expected}")
    batch = np.stack(inputs).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(batch))


def embed(model: nn.Module, inputs: Sequence[np.ndarray], cfg: EncoderConfig) -> np.ndarray:
    """Inference-mode embeddings (N x embedding_dim), deterministic."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(inputs_to_tensor(inputs, cfg))
    finally:
        model.train(was_training)
    return out.numpy()


def distance(e1: np.ndarray, e2: np.ndarray, mode: str = "l2") -> float:
    """Distance between two embeddings: Euclidean, or its square root."""
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    if e1.shape != e2.shape:
        raise LengthMismatch(f"embedding lengths differ: {e1.shape} vs {e2.shape}")
    d = float(np.sqrt(np.sum((e1 - e2) ** 2)))
    if mode == "sqrt_l2":
        return math.sqrt(d)
    if mode != "l2":
        raise ConfigError(f"unknown distance mode {mode!r}")
    return d


def pair_distances(e1: torch.Tensor, e2: torch.Tensor, mode: str = "l2") -> torch.Tensor:
    """Batched distance on embedding tensors; differentiable."""
    d = torch.linalg.vector_norm(e1 - e2, dim=-1)
    if mode == "sqrt_l2":
        return torch.sqrt(d)
    return d


def contrastive_loss(label: int, d: float, cfg: LossConfig = LossConfig()) -> float:
    """Per-pair contrastive loss; label 1 = MZ/positive, 0 = NMZ/negative."""
    if d < 0:
        raise ValueError(f"distance must be nonnegative, got {d}")
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    return 0.5 * (label * d**2 + (1 - label) * max(0.0, cfg.margin - d) ** 2)


def batch_loss(pairs: Sequence[tuple[int, float]], cfg: LossConfig = LossConfig()) -> float:
    """Arithmetic mean of per-pair contrastive losses."""
    if not pairs:
        raise EmptyBatch("batch_loss requires at least one pair")
    return math.fsum(contrastive_loss(label, d, cfg) for label, d in pairs) / len(pairs)


def loss_from_embeddings(
    e1: torch.Tensor,
    e2: torch.Tensor,
    labels: torch.Tensor,
    loss_cfg: LossConfig = LossConfig(),
    mode: str = "l2",
) -> torch.Tensor:
    """Mean contrastive loss on embedding tensors; the training objective."""
    d = pair_distances(e1, e2, mode=mode)
    pos = labels * d.pow(2)
    neg = (1.0 - labels) * torch.clamp(loss_cfg.margin - d, min=0.0).pow(2)
    return (0.5 * (pos + neg)).mean()


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    model: nn.Module,
    encoder_cfg: EncoderConfig,
    loss_cfg: LossConfig,
    seed: int,
    epoch: int,
    val_loss: float,
) -> None:
    """Serialize parameters plus a JSON sidecar describing the run state."""
    path = Path(path)
    torch.save(model.state_dict(), path)
    sidecar = {
        "encoder": asdict(encoder_cfg),
        "loss": asdict(loss_cfg),
        "seed": seed,
        "epoch": epoch,
        "val_loss": val_loss,
    }
    sidecar_path = path.with_suffix(".json")
    tmp = sidecar_path.with_name(sidecar_path.name + ".tmp")
    tmp.write_text(json.dumps(sidecar, indent=1), encoding="utf-8")
    tmp.replace(sidecar_path)


def load_checkpoint(path: str | Path) -> tuple[nn.Module, EncoderConfig, LossConfig, dict]:
    """Rebuild the model from a checkpoint and its sidecar."""
    path = Path(path)
    sidecar_path = path.with_suffix(".json")
    try:
        sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
        encoder_cfg = EncoderConfig(**sidecar["encoder"])
        loss_cfg = LossConfig(**sidecar["loss"])
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad checkpoint sidecar {sidecar_path}: {exc}") from exc
    model = build_model(
        EncoderConfig(**{**sidecar["encoder"], "pretrained": False})
    )
    state = torch.load(path, map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    return model, encoder_cfg, loss_cfg, sidecar
