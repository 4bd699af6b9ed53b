"""Flat key-value config files and experiment configuration assembly.

The config file format is a flat TOML-style ``key = value`` list: quoted
strings, integers, floats, and true/false booleans, with full-line ``#``
comments. Keys mirror the training/optimizer/encoder config field names;
CLI flags override file values.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields
from pathlib import Path

from .encoder import EncoderConfig, LossConfig
from .errors import ConfigError
from .preprocess import InputVariant
from .trainer import OptimizerConfig, TrainConfig

_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _parse_value(raw: str, path: Path, lineno: int):
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    if raw in ("true", "false"):
        return raw == "true"
    if _INT_RE.match(raw):
        return int(raw)
    if _FLOAT_RE.match(raw):
        return float(raw)
    raise ConfigError(f"{path}:{lineno}: cannot parse value {raw!r}")


def parse_flat_config(path: str | Path) -> dict:
    """Parse a flat key = value file into a dict of typed values."""
    path = Path(path)
    out: dict = {}
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = _parse_value(raw, path, lineno)
    return out


@dataclass
class ExperimentConfig:
    """Everything one training experiment needs, file- and flag-assembled."""

    train: TrainConfig = field(default_factory=TrainConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train_pairs: str | None = None
    manifest: str | None = None
    test_pairs: str | None = None
    test_manifest: str | None = None
    output_dir: str | None = None
    allow_resize: bool = False
    run_seeds: list[int] | None = None


_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"variant"}
_OPT_KEYS = {f.name for f in fields(OptimizerConfig)}
_ENC_KEYS = {f.name for f in fields(EncoderConfig)}
_LOSS_KEYS = {f.name for f in fields(LossConfig)}
_PATH_KEYS = {"train_pairs", "manifest", "test_pairs", "test_manifest", "output_dir"}


def build_experiment_config(values: dict) -> ExperimentConfig:
    """Assemble typed configs from a flat mapping, rejecting unknown keys."""
    train_kwargs: dict = {}
    opt_kwargs: dict = {}
    enc_kwargs: dict = {}
    loss_kwargs: dict = {}
    extra: dict = {}
    for key, value in values.items():
        if value is None:
            continue
        if key == "variant":
            try:
                train_kwargs["variant"] = InputVariant(value)
            except ValueError as exc:
                raise ConfigError(f"unknown variant {value!r}") from exc
        elif key in _TRAIN_KEYS:
            train_kwargs[key] = value
        elif key in _OPT_KEYS:
            opt_kwargs[key] = value
        elif key in _ENC_KEYS:
            enc_kwargs[key] = value
        elif key in _LOSS_KEYS:
            loss_kwargs[key] = value
        elif key in _PATH_KEYS:
            extra[key] = str(value)
        elif key == "allow_resize":
            extra[key] = bool(value)
        elif key == "run_seeds":
            if isinstance(value, str):
                parts = [p.strip() for p in value.split(",") if p.strip()]
                try:
                    extra[key] = [int(p) for p in parts]
                except ValueError as exc:
                    raise ConfigError(f"run_seeds must be comma-separated integers: {value!r}") from exc
            else:
                extra[key] = [int(value)]
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        return ExperimentConfig(
            train=TrainConfig(**train_kwargs),
            optimizer=OptimizerConfig(**opt_kwargs),
            encoder=EncoderConfig(**enc_kwargs),
            loss=LossConfig(**loss_kwargs),
            **extra,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config values: {exc}") from exc


def load_experiment_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse a config file and apply non-None CLI overrides on top."""
    values = parse_flat_config(path)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return build_experiment_config(values)
