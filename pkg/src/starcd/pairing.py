"""Pseudo-bitemporal pair construction from a single-temporal mini-batch.

A mini-batch of images is re-paired with a shuffled copy of itself using a
fixed-point-free permutation (a derangement), so no image is paired with
itself. Change labels come from comparing the two semantic masks per pixel.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ContractError, InvalidBatchError

# Rejection sampling succeeds with probability ~1/e per draw; 64 failed
# draws is astronomically unlikely, the rotation fallback just guarantees
# termination.
_MAX_REJECTIONS = 64


@dataclass(frozen=True)
class Derangement:
    """A fixed-point-free permutation of {0, ..., n-1}."""

    indices: tuple[int, ...]

    def __post_init__(self):
        n = len(self.indices)
        if n < 2:
            raise InvalidBatchError(
                f"derangement needs n >= 2, got n={n}"
            )
        if sorted(self.indices) != list(range(n)):
            raise ContractError("indices are not a permutation of 0..n-1")
        for i, j in enumerate(self.indices):
            if i == j:
                raise ContractError(f"fixed point at position {i}")

    def __len__(self):
        return len(self.indices)


def sample_derangement(n: int, rng: np.random.Generator) -> Derangement:
    """Sample a fixed-point-free permutation of length ``n``.

    Uniform permutations are drawn and rejected while any index maps to
    itself; after ``_MAX_REJECTIONS`` failures, falls back to the cyclic
    rotation-by-one. Deterministic given the generator state.
    """
    if n < 2:
        raise InvalidBatchError(
            f"cannot build pseudo pairs from a batch of {n}; need n >= 2"
        )
    for _ in range(_MAX_REJECTIONS):
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return Derangement(tuple(int(i) for i in perm))
    return Derangement(tuple((i + 1) % n for i in range(n)))


def _check_binary(name: str, y: torch.Tensor) -> None:
    bad = (y != 0) & (y != 1)
    if bool(bad.any()):
        raise ContractError(
            f"{name} must be strictly binary; found values outside {{0, 1}}"
        )


def assign_change_labels(
    y_a: torch.Tensor, y_b: torch.Tensor, mode: str = "xor"
) -> torch.Tensor:
    """Per-pixel change label from two binary mask batches.

    ``xor`` marks pixels where the object appears at exactly one time
    (overlap becomes a negative sample); ``or`` marks any appearance and
    exists only as the weaker ablation alternative.
    """
    if y_a.shape != y_b.shape:
        raise ContractError(
            f"mask shapes differ: {tuple(y_a.shape)} vs {tuple(y_b.shape)}"
        )
    _check_binary("y_a", y_a)
    _check_binary("y_b", y_b)
    if mode == "xor":
        out = torch.logical_xor(y_a.bool(), y_b.bool())
    elif mode == "or":
        out = torch.logical_or(y_a.bool(), y_b.bool())
    else:
        raise ContractError(f"unknown label assignment mode {mode!r}")
    return out.to(y_a.dtype)


@dataclass(frozen=True)
class PseudoPairBatch:
    """One pseudo-bitemporal training batch.

    ``x2``/``y2`` are ``x1``/``y1`` reordered by ``permutation``;
    ``y_change`` is the elementwise xor of the two mask batches.
    """

    x1: torch.Tensor
    x2: torch.Tensor
    y1: torch.Tensor
    y2: torch.Tensor
    y_change: torch.Tensor
    permutation: Derangement


def make_pseudo_pair_batch(
    x: torch.Tensor,
    y: torch.Tensor,
    rng: np.random.Generator,
    label_mode: str = "xor",
) -> PseudoPairBatch:
    """Build a PseudoPairBatch from an image batch and its semantic masks."""
    if x.shape[0] != y.shape[0]:
        raise ContractError(
            f"batch sizes differ: images {x.shape[0]}, masks {y.shape[0]}"
        )
    if x.shape[-2:] != y.shape[-2:]:
        raise ContractError(
            f"spatial shapes differ: {tuple(x.shape[-2:])} vs {tuple(y.shape[-2:])}"
        )
    pi = sample_derangement(x.shape[0], rng)
    idx = torch.as_tensor(pi.indices, dtype=torch.long, device=x.device)
    x2 = x[idx]
    y2 = y[idx]
    y_change = assign_change_labels(y, y2, mode=label_mode)
    return PseudoPairBatch(x1=x, x2=x2, y1=y, y2=y2, y_change=y_change, permutation=pi)
