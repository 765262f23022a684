"""Declarative run configuration.

One YAML/JSON document describes a whole run: mode, dataset paths, model
selection, and training hyperparameters. The schema is validated before any
work starts and unknown keys are rejected."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import AugmentationConfig
from .errors import ConfigError
from .model import ChangeMixinConfig
from .training import TrainConfig


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "reference"
    in_channels: int = 3
    base_width: int = 16
    changemixin: ChangeMixinConfig = field(default_factory=ChangeMixinConfig)

    def __post_init__(self):
        if self.backbone != "reference":
            raise ConfigError(
                f"unknown backbone {self.backbone!r}; only 'reference' is built in "
                f"(plug-ins implement the backbone contract in code)"
            )


@dataclass(frozen=True)
class RunConfig:
    mode: str
    seed: int
    train_root: str
    eval_root: str | None
    out_dir: str | None
    model: ModelConfig
    train: TrainConfig


def _section(doc: dict, name: str, allowed: set[str]) -> dict:
    sub = doc.get(name, {})
    if not isinstance(sub, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    unknown = set(sub) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return sub


_TOP_KEYS = {"mode", "seed", "out_dir", "data", "model", "train", "augment"}
_DATA_KEYS = {"train_root", "eval_root"}
_MODEL_KEYS = {"backbone", "in_channels", "base_width", "changemixin"}
_MIXIN_KEYS = {"num_layers", "channels"}
_TRAIN_KEYS = {
    "max_steps", "batch_size", "lr", "poly_power", "momentum", "weight_decay",
    "crop_size", "use_semantic", "use_symmetry", "label_mode", "eval_every",
    "checkpoint_every", "log_every",
}
_AUG_KEYS = {"hflip", "vflip", "rot90", "scale_jitter"}


def parse_run_config(doc: dict, overrides: dict | None = None) -> RunConfig:
    """Validate a parsed config document and build a RunConfig."""
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    overrides = overrides or {}

    data = _section(doc, "data", _DATA_KEYS)
    if "train_root" not in data:
        raise ConfigError("data.train_root is required")
    model_doc = dict(_section(doc, "model", _MODEL_KEYS))
    mixin_doc = model_doc.pop("changemixin", {})
    if not isinstance(mixin_doc, dict) or set(mixin_doc) - _MIXIN_KEYS:
        raise ConfigError(
            f"model.changemixin accepts keys {sorted(_MIXIN_KEYS)}"
        )
    train_doc = _section(doc, "train", _TRAIN_KEYS)
    aug_doc = dict(_section(doc, "augment", _AUG_KEYS))
    if "scale_jitter" in aug_doc:
        aug_doc["scale_jitter"] = tuple(aug_doc["scale_jitter"])

    mode = overrides.get("mode") or doc.get("mode", "star")
    seed = overrides.get("seed")
    if seed is None:
        seed = doc.get("seed", 0)
    out_dir = overrides.get("out_dir") or doc.get("out_dir")
    try:
        crop = train_doc.get("crop_size", 128)
        aug = AugmentationConfig(crop_size=crop, **aug_doc)
        train = TrainConfig(
            mode=mode, seed=int(seed), augmentation=aug, **train_doc
        )
        model = ModelConfig(changemixin=ChangeMixinConfig(**mixin_doc), **model_doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        mode=mode,
        seed=int(seed),
        train_root=str(data["train_root"]),
        eval_root=str(data["eval_root"]) if data.get("eval_root") else None,
        out_dir=str(out_dir) if out_dir else None,
        model=model,
        train=train,
    )


def load_run_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_run_config(doc, overrides)
