"""Change detection models.

ChangeStar couples a pluggable dense segmentation backbone with a small
change head (ChangeMixin). The head consumes both channel-concatenation
orders of the two temporal feature maps through one weight-shared stack of
conv layers, so binary change is learned as an undirected relation. A
post-classification comparison (PCC) baseline diffs the two thresholded
segmentation maps instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Protocol, runtime_checkable

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ContractError


@dataclass(frozen=True)
class FeatureMap:
    """Dense backbone feature at output stride ``stride``."""

    values: torch.Tensor  # n x D x h x w
    stride: int

    def __post_init__(self):
        if self.stride < 1:
            raise ContractError(f"stride must be >= 1, got {self.stride}")


@runtime_checkable
class BackboneContract(Protocol):
    """What a segmentation backbone must expose to host a change head."""

    feature_channels: int
    out_stride: int

    def features(self, x: torch.Tensor) -> FeatureMap: ...

    def segment_logits(self, f: FeatureMap) -> torch.Tensor: ...


@dataclass(frozen=True)
class ChangeMixinConfig:
    num_layers: int = 4   # conv layers in the change head
    channels: int = 16    # filters per layer

    def __post_init__(self):
        if self.num_layers < 1 or self.channels < 1:
            raise ContractError(
                f"change head needs num_layers >= 1 and channels >= 1, "
                f"got {self.num_layers}, {self.channels}"
            )


@dataclass
class ChangeStarOutput:
    seg_logits_t1: torch.Tensor
    seg_logits_t2: torch.Tensor
    change_logits_fwd: torch.Tensor          # order (t1, t2)
    change_logits_bwd: torch.Tensor | None   # order (t2, t1); train mode only


def temporal_swap(f1: FeatureMap, f2: FeatureMap) -> tuple[FeatureMap, FeatureMap]:
    """Concatenate the two temporal features along channels, in both orders."""
    if f1.values.shape != f2.values.shape or f1.stride != f2.stride:
        raise ContractError(
            f"feature maps differ: {tuple(f1.values.shape)}@{f1.stride} vs "
            f"{tuple(f2.values.shape)}@{f2.stride}"
        )
    a = torch.cat([f1.values, f2.values], dim=1)
    b = torch.cat([f2.values, f1.values], dim=1)
    return FeatureMap(a, f1.stride), FeatureMap(b, f1.stride)


class DualOrderBatchNorm2d(nn.Module):
    """BatchNorm2d whose training statistics are bitwise invariant to
    swapping the two halves of the batch.

    The change head sees the two temporal orders stacked along the batch
    axis. Plain BatchNorm reduces over the whole batch in memory order, so
    swapping the halves can perturb the statistics in the last bit. Here the
    per-half sums are reduced first and then added, which commutes exactly.
    """

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.num_features = num_features
        self.eps = eps
        self.momentum = momentum
        self.weight = nn.Parameter(torch.ones(num_features))
        self.bias = nn.Parameter(torch.zeros(num_features))
        self.register_buffer("running_mean", torch.zeros(num_features))
        self.register_buffer("running_var", torch.ones(num_features))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not self.training:
            rm = self.running_mean.to(x.dtype)
            rv = self.running_var.to(x.dtype)
            return F.batch_norm(
                x, rm, rv, self.weight.to(x.dtype), self.bias.to(x.dtype),
                training=False, eps=self.eps,
            )
        n, c, h, w = x.shape
        if n % 2 == 0:
            halves = x.view(2, n // 2, c, h, w)
            s = halves.sum(dim=(1, 3, 4))
            ssq = (halves * halves).sum(dim=(1, 3, 4))
            total = s[0] + s[1]
            total_sq = ssq[0] + ssq[1]
        else:
            total = x.sum(dim=(0, 2, 3))
            total_sq = (x * x).sum(dim=(0, 2, 3))
        count = n * h * w
        mean = total / count
        var = (total_sq / count - mean * mean).clamp_min(0.0)
        with torch.no_grad():
            unbiased = var * (count / max(count - 1, 1))
            self.running_mean.mul_(1 - self.momentum).add_(
                self.momentum * mean.detach().to(self.running_mean.dtype))
            self.running_var.mul_(1 - self.momentum).add_(
                self.momentum * unbiased.detach().to(self.running_var.dtype))
        inv = torch.rsqrt(var + self.eps)
        y = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        return y * self.weight[None, :, None, None] + self.bias[None, :, None, None]


class ChangeMixin(nn.Module):
    """Small change head: conv stack on swapped feature pairs plus upsampling.

    ``num_layers`` 3x3 convs with ``channels`` filters (each BN + ReLU),
    a 3x3 single-filter projection, then bilinear upsampling back to input
    resolution. Emits pre-sigmoid logits.
    """

    def __init__(self, in_channels: int, cfg: ChangeMixinConfig | None = None):
        super().__init__()
        cfg = cfg or ChangeMixinConfig()
        self.cfg = cfg
        layers: list[nn.Module] = []
        c_in = 2 * in_channels  # both temporal features, concatenated
        for _ in range(cfg.num_layers):
            layers += [
                nn.Conv2d(c_in, cfg.channels, 3, padding=1, bias=False),
                DualOrderBatchNorm2d(cfg.channels),
                nn.ReLU(inplace=True),
            ]
            c_in = cfg.channels
        self.convs = nn.Sequential(*layers)
        self.project = nn.Conv2d(cfg.channels, 1, 3, padding=1)

    def forward(
        self, f1: FeatureMap, f2: FeatureMap, mode: str = "train"
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        if mode not in ("train", "infer"):
            raise ContractError(f"mode must be 'train' or 'infer', got {mode!r}")
        t12, t21 = temporal_swap(f1, f2)
        stride = f1.stride
        if mode == "infer":
            logits = self._head(t12.values, stride)
            return logits, None
        # One fused pass so normalization statistics see both orders and the
        # two outputs stay exactly exchange-symmetric.
        z = torch.cat([t12.values, t21.values], dim=0)
        logits = self._head(z, stride)
        n = f1.values.shape[0]
        return logits[:n], logits[n:]

    def _head(self, z: torch.Tensor, stride: int) -> torch.Tensor:
        out = self.project(self.convs(z))
        if stride > 1:
            out = F.interpolate(
                out, scale_factor=stride, mode="bilinear", align_corners=False
            )
        return out


class ReferenceBackbone(nn.Module):
    """Small encoder-decoder dense predictor with output stride 4.

    Stands in for a full segmentation architecture; anything satisfying
    ``BackboneContract`` plugs into ChangeStar the same way.
    """

    out_stride = 4

    def __init__(self, in_channels: int = 3, base_width: int = 16):
        super().__init__()
        w = base_width
        self.in_channels = in_channels
        self.base_width = base_width
        self.feature_channels = 2 * w
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, w, 3, padding=1, bias=False),
            nn.BatchNorm2d(w), nn.ReLU(inplace=True),
            nn.Conv2d(w, w, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(w), nn.ReLU(inplace=True),
        )
        self.enc2 = nn.Sequential(
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(2 * w), nn.ReLU(inplace=True),
            nn.Conv2d(2 * w, 2 * w, 3, padding=1, bias=False),
            nn.BatchNorm2d(2 * w), nn.ReLU(inplace=True),
        )
        self.enc3 = nn.Sequential(
            nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1, bias=False),
            nn.BatchNorm2d(4 * w), nn.ReLU(inplace=True),
            nn.Conv2d(4 * w, 4 * w, 3, padding=1, bias=False),
            nn.BatchNorm2d(4 * w), nn.ReLU(inplace=True),
        )
        self.decode = nn.Sequential(
            nn.Conv2d(6 * w, 2 * w, 3, padding=1, bias=False),
            nn.BatchNorm2d(2 * w), nn.ReLU(inplace=True),
        )
        self.classifier = nn.Conv2d(2 * w, 1, 3, padding=1)

    def features(self, x: torch.Tensor) -> FeatureMap:
        s2 = self.stem(x)
        s4 = self.enc2(s2)
        s8 = self.enc3(s4)
        up = F.interpolate(s8, scale_factor=2, mode="bilinear", align_corners=False)
        f = self.decode(torch.cat([up, s4], dim=1))
        return FeatureMap(f, self.out_stride)

    def segment_logits(self, f: FeatureMap) -> torch.Tensor:
        logits = self.classifier(f.values)
        return F.interpolate(
            logits, scale_factor=f.stride, mode="bilinear", align_corners=False
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.segment_logits(self.features(x))


def build_reference_backbone(
    in_channels: int = 3, base_width: int = 16, seed: int | None = None
) -> ReferenceBackbone:
    """Construct the reference backbone, optionally with a fixed init seed."""
    if seed is not None:
        torch.manual_seed(seed)
    return ReferenceBackbone(in_channels=in_channels, base_width=base_width)


class ChangeStar(nn.Module):
    """Segmentation backbone + ChangeMixin, trained jointly.

    Both images pass through the same backbone weights; the change head
    consumes the backbone's dense features. In train mode both temporal
    orders of change logits are produced, in infer mode only (t1, t2).
    """

    def __init__(self, backbone: BackboneContract, mixin_cfg: ChangeMixinConfig | None = None):
        super().__init__()
        self.backbone = backbone
        self.mixin_cfg = mixin_cfg or ChangeMixinConfig()
        self.change_mixin = ChangeMixin(backbone.feature_channels, self.mixin_cfg)

    def forward(self, x1: torch.Tensor, x2: torch.Tensor, mode: str = "train") -> ChangeStarOutput:
        if x1.shape != x2.shape:
            raise ContractError(
                f"input shapes differ: {tuple(x1.shape)} vs {tuple(x2.shape)}"
            )
        n = x1.shape[0]
        # Fused pass: backbone batch statistics see both times identically.
        f_all = self.backbone.features(torch.cat([x1, x2], dim=0))
        seg_all = self.backbone.segment_logits(f_all)
        f1 = FeatureMap(f_all.values[:n], f_all.stride)
        f2 = FeatureMap(f_all.values[n:], f_all.stride)
        fwd, bwd = self.change_mixin(f1, f2, mode=mode)
        return ChangeStarOutput(
            seg_logits_t1=seg_all[:n],
            seg_logits_t2=seg_all[n:],
            change_logits_fwd=fwd,
            change_logits_bwd=bwd,
        )


@torch.no_grad()
def pcc_predict(
    model: BackboneContract | ChangeStar,
    x1: torch.Tensor,
    x2: torch.Tensor,
    threshold: float = 0.5,
) -> torch.Tensor:
    """Post-classification comparison: segment each time independently,
    binarize, and xor the two maps."""
    backbone = model.backbone if isinstance(model, ChangeStar) else model
    p1 = torch.sigmoid(backbone.segment_logits(backbone.features(x1)))
    p2 = torch.sigmoid(backbone.segment_logits(backbone.features(x2)))
    return torch.logical_xor(p1 > threshold, p2 > threshold).to(torch.uint8)


@torch.no_grad()
def change_probability(model: ChangeStar, x1: torch.Tensor, x2: torch.Tensor) -> torch.Tensor:
    """Change probability map from the change head (inference order t1, t2)."""
    out = model(x1, x2, mode="infer")
    return torch.sigmoid(out.change_logits_fwd)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


ARCH_NAME = "changestar-reference"


def save_checkpoint(
    model: ChangeStar,
    path: str | Path,
    step: int = 0,
    seed: int | None = None,
    optimizer: torch.optim.Optimizer | None = None,
    extra: dict | None = None,
) -> None:
    """Write a checkpoint directory: weights blob + JSON metadata manifest."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = {"model": model.state_dict()}
    if optimizer is not None:
        blob["optimizer"] = optimizer.state_dict()
    torch.save(blob, path / "weights.pt")
    backbone = model.backbone
    meta = {
        "architecture": ARCH_NAME,
        "in_channels": getattr(backbone, "in_channels", 3),
        "base_width": getattr(backbone, "base_width", 16),
        "changemixin": asdict(model.mixin_cfg),
        "step": step,
        "seed": seed,
    }
    if extra:
        meta.update(extra)
    (path / "meta.json").write_text(json.dumps(meta, indent=2))


def load_checkpoint(path: str | Path) -> tuple[ChangeStar, dict]:
    """Load a checkpoint directory; architecture mismatch is a hard error."""
    path = Path(path)
    meta_file = path / "meta.json"
    weights_file = path / "weights.pt"
    if not meta_file.exists() or not weights_file.exists():
        raise ContractError(f"not a checkpoint directory: {path}")
    meta = json.loads(meta_file.read_text())
    if meta.get("architecture") != ARCH_NAME:
        raise ContractError(
            f"checkpoint architecture {meta.get('architecture')!r} does not "
            f"match {ARCH_NAME!r}"
        )
    backbone = ReferenceBackbone(
        in_channels=meta["in_channels"], base_width=meta["base_width"]
    )
    model = ChangeStar(backbone, ChangeMixinConfig(**meta["changemixin"]))
    blob = torch.load(weights_file, map_location="cpu", weights_only=True)
    model.load_state_dict(blob["model"])
    meta["_optimizer_state"] = blob.get("optimizer")
    return model, meta
