"""Training objectives: binary cross-entropy segmentation loss and the
temporal-symmetry change loss, combined as an unweighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError, ContractError
from .model import ChangeStarOutput


@dataclass
class LossBreakdown:
    seg: torch.Tensor
    change: torch.Tensor
    total: torch.Tensor


def _match(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Align an n x H x W mask batch with n x 1 x H x W logits."""
    if targets.dim() == logits.dim() - 1:
        targets = targets.unsqueeze(1)
    if targets.shape != logits.shape:
        raise ContractError(
            f"logits {tuple(logits.shape)} and targets {tuple(targets.shape)} "
            f"do not match"
        )
    return targets


def bce(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy, computed in the stable logit form."""
    targets = _match(logits, targets)
    return F.binary_cross_entropy_with_logits(logits, targets.to(logits.dtype))


def seg_loss(out: ChangeStarOutput, y1: torch.Tensor, y2: torch.Tensor) -> torch.Tensor:
    """Semantic supervision: mean BCE over the two per-time segmentations."""
    if y1 is None or y2 is None:
        raise ConfigError("semantic supervision requires masks for both times")
    return 0.5 * (bce(out.seg_logits_t1, y1) + bce(out.seg_logits_t2, y2))


def symmetry_change_loss(out: ChangeStarOutput, y_change: torch.Tensor) -> torch.Tensor:
    """Average BCE over both temporal orders of the change prediction.

    Penalizing both orders against the same undirected label keeps the
    detector from fitting a temporal direction.
    """
    if out.change_logits_bwd is None:
        raise ContractError(
            "symmetry loss needs both temporal orders; run the model in train mode"
        )
    return 0.5 * (bce(out.change_logits_fwd, y_change) + bce(out.change_logits_bwd, y_change))


def total_loss(
    out: ChangeStarOutput,
    y1: torch.Tensor | None,
    y2: torch.Tensor | None,
    y_change: torch.Tensor,
    use_semantic: bool = True,
    use_symmetry: bool = True,
) -> LossBreakdown:
    """Multi-task objective: segmentation term plus change term.

    With ``use_symmetry`` off the change term uses the forward order only;
    with ``use_semantic`` off the segmentation term is zero. The four flag
    combinations are the component-ablation variants.
    """
    if use_symmetry:
        change = symmetry_change_loss(out, y_change)
    else:
        change = bce(out.change_logits_fwd, y_change)
    if use_semantic:
        seg = seg_loss(out, y1, y2)
    else:
        seg = torch.zeros((), dtype=change.dtype, device=change.device)
    return LossBreakdown(seg=seg, change=change, total=seg + change)
