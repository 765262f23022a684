"""Training loops: pseudo-pair (single-temporal) and real-pair (bitemporal)
supervision with SGD, momentum, weight decay, and a poly learning-rate
schedule.

Determinism contract: every random draw is derived from (seed, step), so a
run is reproducible on one device and a checkpoint resume continues the
uninterrupted run bit-for-bit."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .data import (
    AugmentationConfig,
    BitemporalSample,
    Sample,
    augment,
    augment_bitemporal,
)
from .errors import ConfigError, ContractError, TrainingDivergedError
from .evaluation import evaluate_change
from .losses import total_loss
from .model import (
    ChangeMixinConfig,
    ChangeStar,
    ReferenceBackbone,
    load_checkpoint,
    save_checkpoint,
)
from .pairing import make_pseudo_pair_batch


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "star"                 # "star" or "bitemporal"
    max_steps: int = 2000
    batch_size: int = 8
    lr: float = 0.03
    poly_power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 1e-4
    crop_size: int = 128
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    use_semantic: bool = True
    use_symmetry: bool = True
    label_mode: str = "xor"
    seed: int = 0
    eval_every: int = 200
    checkpoint_every: int = 0          # 0 disables periodic checkpoints
    log_every: int = 50

    def __post_init__(self):
        if self.mode not in ("star", "bitemporal"):
            raise ConfigError(f"mode must be 'star' or 'bitemporal', got {self.mode!r}")
        if self.mode == "star" and self.batch_size < 2:
            raise ConfigError(
                "pseudo-pair training needs batch_size >= 2: a batch of one "
                "image cannot be paired with a different image"
            )
        if self.batch_size < 1 or self.max_steps < 0:
            raise ConfigError("batch_size must be >= 1 and max_steps >= 0")
        if self.lr <= 0 or self.poly_power <= 0:
            raise ConfigError("lr and poly_power must be positive")
        if self.label_mode not in ("xor", "or"):
            raise ConfigError(f"label_mode must be 'xor' or 'or', got {self.label_mode!r}")
        if self.augmentation.crop_size != self.crop_size:
            raise ConfigError(
                f"augmentation.crop_size ({self.augmentation.crop_size}) must "
                f"equal crop_size ({self.crop_size})"
            )


def poly_lr(step: int, max_steps: int, lr0: float, power: float) -> float:
    """lr0 * (1 - step/max_steps) ** power."""
    if not 0 <= step <= max_steps:
        raise ContractError(f"step {step} outside [0, {max_steps}]")
    return lr0 * (1.0 - step / max_steps) ** power


@dataclass
class TrainResult:
    model: ChangeStar
    log: list[dict]


def build_default_model(cfg: TrainConfig, in_channels: int = 3,
                        base_width: int = 16,
                        mixin_cfg: ChangeMixinConfig | None = None) -> ChangeStar:
    torch.manual_seed(cfg.seed)
    backbone = ReferenceBackbone(in_channels=in_channels, base_width=base_width)
    return ChangeStar(backbone, mixin_cfg or ChangeMixinConfig())


def make_optimizer(model: ChangeStar, cfg: TrainConfig) -> torch.optim.SGD:
    """SGD with momentum; weight decay on conv/linear weights only."""
    decay, no_decay = [], []
    for p in model.parameters():
        (decay if p.ndim > 1 else no_decay).append(p)
    return torch.optim.SGD(
        [
            {"params": decay, "weight_decay": cfg.weight_decay},
            {"params": no_decay, "weight_decay": 0.0},
        ],
        lr=cfg.lr,
        momentum=cfg.momentum,
    )


def _step_rng(seed: int, step: int, salt: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, salt])


def _log_record(step: int, lr: float, loss) -> dict:
    return {
        "step": step,
        "lr": lr,
        "loss_seg": loss.seg.detach().item(),
        "loss_change": loss.change.detach().item(),
        "loss_total": loss.total.detach().item(),
    }


class _JsonlWriter:
    def __init__(self, path: Path | None):
        self.path = path
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, record: dict) -> None:
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record) + "\n")


def _star_batch(dataset: Sequence[Sample], cfg: TrainConfig, step: int):
    rng = _step_rng(cfg.seed, step, 0)
    replace = len(dataset) < cfg.batch_size
    idx = rng.choice(len(dataset), size=cfg.batch_size, replace=replace)
    images, masks = [], []
    for slot, i in enumerate(idx):
        s = augment(dataset[int(i)], cfg.augmentation, _step_rng(cfg.seed, step, 1 + slot))
        images.append(torch.from_numpy(s.image))
        masks.append(torch.from_numpy(s.mask))
    x = torch.stack(images)
    y = torch.stack(masks)
    return make_pseudo_pair_batch(x, y, _step_rng(cfg.seed, step, 999), cfg.label_mode)


def _bitemporal_batch(dataset: Sequence[BitemporalSample], cfg: TrainConfig, step: int):
    rng = _step_rng(cfg.seed, step, 0)
    replace = len(dataset) < cfg.batch_size
    idx = rng.choice(len(dataset), size=cfg.batch_size, replace=replace)
    x1s, x2s, ycs, y1s, y2s = [], [], [], [], []
    has_sem = True
    for slot, i in enumerate(idx):
        s = augment_bitemporal(
            dataset[int(i)], cfg.augmentation, _step_rng(cfg.seed, step, 1 + slot)
        )
        x1s.append(torch.from_numpy(s.image_t1))
        x2s.append(torch.from_numpy(s.image_t2))
        ycs.append(torch.from_numpy(s.change_mask))
        if s.semantic_t1 is None:
            has_sem = False
        else:
            y1s.append(torch.from_numpy(s.semantic_t1))
            y2s.append(torch.from_numpy(s.semantic_t2))
    x1 = torch.stack(x1s)
    x2 = torch.stack(x2s)
    yc = torch.stack(ycs)
    y1 = torch.stack(y1s) if has_sem else None
    y2 = torch.stack(y2s) if has_sem else None
    return x1, x2, y1, y2, yc


def _run_loop(
    cfg: TrainConfig,
    dataset,
    batch_fn,
    eval_pairs: Sequence[BitemporalSample] | None,
    out_dir: str | Path | None,
    model: ChangeStar | None,
    resume_from: str | Path | None,
    semantic_available: bool,
) -> TrainResult:
    if len(dataset) == 0:
        raise ConfigError("training dataset is empty")
    start_step = 0
    optimizer_state = None
    if resume_from is not None:
        model, meta = load_checkpoint(resume_from)
        start_step = meta["step"]
        optimizer_state = meta.pop("_optimizer_state", None)
    elif model is None:
        model = build_default_model(cfg)
    optimizer = make_optimizer(model, cfg)
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)

    out_dir = Path(out_dir) if out_dir is not None else None
    writer = _JsonlWriter(out_dir / "metrics.jsonl" if out_dir else None)
    use_semantic = cfg.use_semantic and semantic_available
    log: list[dict] = []
    model.train()
    for step in range(start_step, cfg.max_steps):
        lr = poly_lr(step, cfg.max_steps, cfg.lr, cfg.poly_power)
        for group in optimizer.param_groups:
            group["lr"] = lr
        batch = batch_fn(dataset, cfg, step)
        if cfg.mode == "star":
            x1, x2, y1, y2, yc = batch.x1, batch.x2, batch.y1, batch.y2, batch.y_change
        else:
            x1, x2, y1, y2, yc = batch
        out = model(x1, x2, mode="train")
        loss = total_loss(
            out, y1, y2, yc, use_semantic=use_semantic, use_symmetry=cfg.use_symmetry
        )
        if not torch.isfinite(loss.total):
            raise TrainingDivergedError(
                f"non-finite loss at step {step}: seg={float(loss.seg)}, "
                f"change={float(loss.change)}, lr={lr}"
            )
        optimizer.zero_grad()
        loss.total.backward()
        optimizer.step()

        done = step + 1
        if done % cfg.log_every == 0 or done == cfg.max_steps:
            rec = _log_record(done, lr, loss)
            log.append(rec)
            writer.write(rec)
        if eval_pairs and cfg.eval_every and done % cfg.eval_every == 0:
            _, ch = evaluate_change(model, eval_pairs, method="changestar")
            _, pc = evaluate_change(model, eval_pairs, method="pcc")
            rec = {
                "step": done,
                "eval": {
                    "change_iou": ch["iou"], "change_f1": ch["f1"],
                    "pcc_iou": pc["iou"], "pcc_f1": pc["f1"],
                },
            }
            log.append(rec)
            writer.write(rec)
        if out_dir and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            save_checkpoint(
                model, out_dir / f"checkpoint_{done:06d}", step=done,
                seed=cfg.seed, optimizer=optimizer,
            )
    if out_dir is not None:
        save_checkpoint(
            model, out_dir / "checkpoint", step=cfg.max_steps,
            seed=cfg.seed, optimizer=optimizer,
        )
        (out_dir / "train_config.json").write_text(
            json.dumps(asdict(cfg), indent=2, default=list)
        )
    return TrainResult(model=model, log=log)


def train_star(
    cfg: TrainConfig,
    dataset: Sequence[Sample],
    eval_pairs: Sequence[BitemporalSample] | None = None,
    out_dir: str | Path | None = None,
    model: ChangeStar | None = None,
    resume_from: str | Path | None = None,
) -> TrainResult:
    """Train a change detector from unpaired single-temporal samples.

    Each step draws a mini-batch, augments it, re-pairs it with itself via a
    fixed-point-free permutation, and optimizes the multi-task objective."""
    if cfg.mode != "star":
        raise ConfigError(f"train_star requires mode='star', got {cfg.mode!r}")
    dataset = list(dataset)
    if any(s.mask is None for s in dataset):
        raise ConfigError("pseudo-pair training requires a mask for every sample")
    return _run_loop(
        cfg, dataset, _star_batch, eval_pairs, out_dir, model, resume_from,
        semantic_available=True,
    )


def train_bitemporal(
    cfg: TrainConfig,
    dataset: Sequence[BitemporalSample],
    eval_pairs: Sequence[BitemporalSample] | None = None,
    out_dir: str | Path | None = None,
    model: ChangeStar | None = None,
    resume_from: str | Path | None = None,
) -> TrainResult:
    """Train on real co-registered pairs with labeled change masks.

    The semantic loss term is active only when per-time semantic masks are
    present in the dataset."""
    if cfg.mode != "bitemporal":
        raise ConfigError(
            f"train_bitemporal requires mode='bitemporal', got {cfg.mode!r}"
        )
    dataset = list(dataset)
    if any(s.change_mask is None for s in dataset):
        raise ConfigError("bitemporal training requires change masks")
    semantic_available = all(s.semantic_t1 is not None for s in dataset)
    return _run_loop(
        cfg, dataset, _bitemporal_batch, eval_pairs, out_dir, model, resume_from,
        semantic_available=semantic_available,
    )
