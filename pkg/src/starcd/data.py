"""Dataset ingestion, synthetic scene generation, and training augmentations.

In-memory conventions: images are float32 arrays of shape C x H x W with
values in [0, 1]; masks are uint8 arrays of shape H x W with values in
{0, 1}. On disk, images are 8-bit RGB PNG and masks 8-bit single-channel
PNG with values {0, 255}.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ContractError, IngestionError


@dataclass
class Sample:
    image: np.ndarray            # C x H x W float32 in [0, 1]
    mask: np.ndarray | None      # H x W uint8 in {0, 1}
    id: str

    def __post_init__(self):
        if self.mask is not None and self.image.shape[1:] != self.mask.shape:
            raise ContractError(
                f"sample {self.id}: image {self.image.shape[1:]} and mask "
                f"{self.mask.shape} shapes differ"
            )


@dataclass
class BitemporalSample:
    image_t1: np.ndarray
    image_t2: np.ndarray
    change_mask: np.ndarray
    semantic_t1: np.ndarray | None
    semantic_t2: np.ndarray | None
    id: str


# ---------------------------------------------------------------------------
# On-disk layout
# ---------------------------------------------------------------------------

def _read_image(path: Path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1).copy()


def _read_mask(path: Path) -> np.ndarray:
    arr = np.asarray(Image.open(path), dtype=np.uint8)
    if arr.ndim != 2:
        raise IngestionError(f"mask {path} is not single-channel")
    values = np.unique(arr)
    if np.all(np.isin(values, (0, 255))):
        return (arr // 255).astype(np.uint8)
    if np.all(np.isin(values, (0, 1))):
        return arr.astype(np.uint8)
    raise IngestionError(
        f"mask {path} has non-binary values {values[:8].tolist()}; "
        f"expected {{0, 255}} or {{0, 1}}"
    )


def _write_image(path: Path, image: np.ndarray) -> None:
    arr = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr, mode="RGB").save(path)


def _write_mask(path: Path, mask: np.ndarray) -> None:
    Image.fromarray((mask.astype(np.uint8) * 255), mode="L").save(path)


def _ids_in(root: Path, subdir: str, manifest_ids: list[str] | None) -> list[str]:
    d = root / subdir
    if not d.is_dir():
        raise IngestionError(f"missing directory {d}")
    if manifest_ids is not None:
        return manifest_ids
    return sorted(p.stem for p in d.glob("*.png"))


def _load_manifest(root: Path) -> list[str] | None:
    mf = root / "manifest.json"
    if not mf.exists():
        return None
    doc = json.loads(mf.read_text())
    return list(doc["ids"])


def load_single_temporal(root: str | Path) -> Iterator[Sample]:
    """Yield Samples from ``root/images/{id}.png`` + ``root/masks/{id}.png``.

    Pairing is validated up front; pixel data is read lazily.
    """
    root = Path(root)
    ids = _ids_in(root, "images", _load_manifest(root))
    missing = [i for i in ids if not (root / "masks" / f"{i}.png").exists()]
    if missing:
        raise IngestionError(f"images without masks: {missing}")
    for i in ids:
        yield Sample(
            image=_read_image(root / "images" / f"{i}.png"),
            mask=_read_mask(root / "masks" / f"{i}.png"),
            id=i,
        )


def load_bitemporal(root: str | Path) -> Iterator[BitemporalSample]:
    """Yield BitemporalSamples from ``root/t1``, ``root/t2``, ``root/change``
    (and ``root/sem_t1``, ``root/sem_t2`` when present)."""
    root = Path(root)
    ids = _ids_in(root, "t1", _load_manifest(root))
    for sub in ("t2", "change"):
        missing = [i for i in ids if not (root / sub / f"{i}.png").exists()]
        if missing:
            raise IngestionError(f"ids missing from {sub}/: {missing}")
    has_sem = (root / "sem_t1").is_dir() and (root / "sem_t2").is_dir()
    for i in ids:
        yield BitemporalSample(
            image_t1=_read_image(root / "t1" / f"{i}.png"),
            image_t2=_read_image(root / "t2" / f"{i}.png"),
            change_mask=_read_mask(root / "change" / f"{i}.png"),
            semantic_t1=_read_mask(root / "sem_t1" / f"{i}.png") if has_sem else None,
            semantic_t2=_read_mask(root / "sem_t2" / f"{i}.png") if has_sem else None,
            id=i,
        )


def save_single_temporal(samples: Sequence[Sample], root: str | Path) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    ids = []
    for s in samples:
        _write_image(root / "images" / f"{s.id}.png", s.image)
        _write_mask(root / "masks" / f"{s.id}.png", s.mask)
        ids.append(s.id)
    (root / "manifest.json").write_text(
        json.dumps({"kind": "single_temporal", "ids": ids}, indent=2)
    )


def save_bitemporal(samples: Sequence[BitemporalSample], root: str | Path) -> None:
    root = Path(root)
    subdirs = ["t1", "t2", "change"]
    with_sem = any(s.semantic_t1 is not None for s in samples)
    if with_sem:
        subdirs += ["sem_t1", "sem_t2"]
    for sub in subdirs:
        (root / sub).mkdir(parents=True, exist_ok=True)
    ids = []
    for s in samples:
        _write_image(root / "t1" / f"{s.id}.png", s.image_t1)
        _write_image(root / "t2" / f"{s.id}.png", s.image_t2)
        _write_mask(root / "change" / f"{s.id}.png", s.change_mask)
        if with_sem:
            _write_mask(root / "sem_t1" / f"{s.id}.png", s.semantic_t1)
            _write_mask(root / "sem_t2" / f"{s.id}.png", s.semantic_t2)
        ids.append(s.id)
    (root / "manifest.json").write_text(
        json.dumps({"kind": "bitemporal", "ids": ids}, indent=2)
    )


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Knobs for the procedural scene generator.

    Scenes are textured backgrounds with simple object footprints (rectangles,
    rotated rectangles, L-shapes). Object appearance is re-jittered per
    timestamp so an unchanged object still looks slightly different, giving a
    post-classification baseline realistic false-positive opportunities.
    """

    canvas_size: int = 128
    object_count: tuple[int, int] = (4, 10)
    object_size: tuple[int, int] = (10, 36)
    shapes: tuple[str, ...] = ("rect", "rot_rect", "l_shape")
    noise_scale: int = 16          # cells of the low-frequency background noise
    base_brightness: tuple[float, float] = (0.35, 0.65)  # per-tile base level
    color_jitter: float = 0.12     # per-tile base color spread
    contrast_range: tuple[float, float] = (0.03, 0.4)   # object-background contrast
    illumination: float = 0.15     # per-render linear shading gradient amplitude
    add_fraction: float = 0.3      # expected new objects per t1 object
    remove_fraction: float = 0.3   # probability a t1 object disappears at t2
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.add_fraction <= 1.0 and 0.0 <= self.remove_fraction <= 1.0):
            raise ContractError("change fractions must lie in [0, 1]")
        if self.canvas_size <= 0 or self.noise_scale <= 0:
            raise ContractError("canvas_size and noise_scale must be positive")
        if self.object_count[0] <= 0 or self.object_count[0] > self.object_count[1]:
            raise ContractError("object_count must be a positive (min, max) range")
        if self.object_size[0] <= 0 or self.object_size[0] > self.object_size[1]:
            raise ContractError("object_size must be a positive (min, max) range")
        unknown = set(self.shapes) - {"rect", "rot_rect", "l_shape"}
        if unknown:
            raise ContractError(f"unknown shape families: {sorted(unknown)}")


def _background(rng: np.random.Generator, spec: SyntheticSceneSpec) -> np.ndarray:
    size = spec.canvas_size
    base = rng.uniform(*spec.base_brightness)
    chan = base + rng.uniform(-spec.color_jitter, spec.color_jitter, size=3)
    cells = max(2, size // spec.noise_scale)
    coarse = rng.normal(0.0, 0.08, size=(1, 3, cells, cells)).astype(np.float32)
    noise = F.interpolate(
        torch.from_numpy(coarse), size=(size, size), mode="bilinear", align_corners=False
    ).numpy()[0]
    img = chan.astype(np.float32)[:, None, None] + noise
    img += rng.normal(0.0, 0.015, size=img.shape).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def _footprint(rng: np.random.Generator, spec: SyntheticSceneSpec) -> np.ndarray:
    """Rasterize one object footprint as a boolean canvas-sized mask."""
    size = spec.canvas_size
    lo, hi = spec.object_size
    h = int(rng.integers(lo, hi + 1))
    w = int(rng.integers(lo, hi + 1))
    cy = rng.uniform(h / 2, size - h / 2) if size > h else size / 2
    cx = rng.uniform(w / 2, size - w / 2) if size > w else size / 2
    shape = spec.shapes[int(rng.integers(len(spec.shapes)))]
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    if shape == "rot_rect":
        theta = rng.uniform(0, math.pi)
        ry = dy * math.cos(theta) - dx * math.sin(theta)
        rx = dy * math.sin(theta) + dx * math.cos(theta)
        mask = (np.abs(ry) <= h / 2) & (np.abs(rx) <= w / 2)
    else:
        mask = (np.abs(dy) <= h / 2) & (np.abs(dx) <= w / 2)
        if shape == "l_shape":
            # Remove one quadrant of the rectangle's bounding box.
            qy = rng.integers(2)
            qx = rng.integers(2)
            cut_y = (dy <= 0) if qy == 0 else (dy >= 0)
            cut_x = (dx <= 0) if qx == 0 else (dx >= 0)
            mask &= ~(cut_y & cut_x)
    return mask


def _render(
    rng: np.random.Generator,
    spec: SyntheticSceneSpec,
    footprints: list[np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Draw footprints over a fresh background; appearance is sampled here, so
    re-rendering the same footprints yields a semantically identical scene
    with different looks."""
    img = _background(rng, spec)
    sem = np.zeros((spec.canvas_size, spec.canvas_size), dtype=np.uint8)
    for fp in footprints:
        contrast = rng.uniform(*spec.contrast_range) * (1 if rng.random() < 0.5 else -1)
        local = float(img[:, fp].mean()) if fp.any() else 0.5
        color = local + contrast + rng.uniform(-0.05, 0.05, size=3)
        tex = rng.normal(0.0, 0.02, size=(3, spec.canvas_size, spec.canvas_size))
        obj = np.clip(color[:, None, None] + tex, 0.0, 1.0).astype(np.float32)
        img = np.where(fp[None], obj, img)
        sem |= fp.astype(np.uint8)
    # Per-render shading: a linear illumination ramp over the whole tile, so
    # the same object can sit at a different local contrast at each timestamp.
    size = spec.canvas_size
    ax = rng.uniform(-spec.illumination, spec.illumination)
    ay = rng.uniform(-spec.illumination, spec.illumination)
    ramp = (ax * np.linspace(-0.5, 0.5, size)[None, :]
            + ay * np.linspace(-0.5, 0.5, size)[:, None]).astype(np.float32)
    img = np.clip(img + ramp[None], 0.0, 1.0)
    return img, sem


def generate_synthetic(
    spec: SyntheticSceneSpec, n_train: int, n_eval_pairs: int
) -> tuple[list[Sample], list[BitemporalSample]]:
    """Generate a single-temporal training set and a bitemporal eval set.

    Eval change masks are the xor of the two timestamps' semantic masks,
    derived from the generator's own object bookkeeping. Deterministic per
    ``spec.seed``.
    """
    rng = np.random.default_rng(spec.seed)
    train: list[Sample] = []
    for k in range(n_train):
        n_obj = int(rng.integers(spec.object_count[0], spec.object_count[1] + 1))
        fps = [_footprint(rng, spec) for _ in range(n_obj)]
        img, sem = _render(rng, spec, fps)
        train.append(Sample(image=img, mask=sem, id=f"train_{k:05d}"))

    pairs: list[BitemporalSample] = []
    for k in range(n_eval_pairs):
        n_obj = int(rng.integers(spec.object_count[0], spec.object_count[1] + 1))
        fps_t1 = [_footprint(rng, spec) for _ in range(n_obj)]
        kept = [fp for fp in fps_t1 if rng.random() >= spec.remove_fraction]
        n_add = int(rng.binomial(n_obj, spec.add_fraction))
        fps_t2 = kept + [_footprint(rng, spec) for _ in range(n_add)]
        img1, sem1 = _render(rng, spec, fps_t1)
        img2, sem2 = _render(rng, spec, fps_t2)
        pairs.append(
            BitemporalSample(
                image_t1=img1,
                image_t2=img2,
                change_mask=(sem1 ^ sem2).astype(np.uint8),
                semantic_t1=sem1,
                semantic_t2=sem2,
                id=f"pair_{k:05d}",
            )
        )
    return train, pairs


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentationConfig:
    hflip: bool = True
    vflip: bool = True
    rot90: bool = True                              # quarter-turn rotations
    scale_jitter: tuple[float, float] = (1.0, 1.5)  # resize factor range
    crop_size: int = 128

    def __post_init__(self):
        lo, hi = self.scale_jitter
        if not (lo <= 1.0 <= hi) or lo <= 0:
            raise ContractError(f"scale_jitter must satisfy 0 < lo <= 1 <= hi, got {self.scale_jitter}")
        if self.crop_size <= 0:
            raise ContractError("crop_size must be positive")


def identity_augmentation(size: int) -> AugmentationConfig:
    return AugmentationConfig(
        hflip=False, vflip=False, rot90=False, scale_jitter=(1.0, 1.0), crop_size=size
    )


def _resize(image: np.ndarray, size: tuple[int, int], mode: str) -> np.ndarray:
    t = torch.from_numpy(image[None].astype(np.float32))
    if mode == "nearest":
        out = F.interpolate(t, size=size, mode="nearest")
    else:
        out = F.interpolate(t, size=size, mode="bilinear", align_corners=False)
    return out.numpy()[0]


def _augment_arrays(
    images: list[np.ndarray],
    masks: list[np.ndarray],
    cfg: AugmentationConfig,
    rng: np.random.Generator,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Apply one random geometric transform identically to all arrays."""
    do_h = cfg.hflip and rng.random() < 0.5
    do_v = cfg.vflip and rng.random() < 0.5
    k = int(rng.integers(4)) if cfg.rot90 else 0
    factor = float(rng.uniform(*cfg.scale_jitter))

    def geom(arr: np.ndarray) -> np.ndarray:
        if do_h:
            arr = np.flip(arr, axis=-1)
        if do_v:
            arr = np.flip(arr, axis=-2)
        if k:
            arr = np.rot90(arr, k=k, axes=(-2, -1))
        return arr

    images = [geom(im) for im in images]
    masks = [geom(m) for m in masks]
    h, w = masks[0].shape if masks else images[0].shape[-2:]
    if factor != 1.0:
        h, w = max(1, round(h * factor)), max(1, round(w * factor))
        images = [_resize(im, (h, w), "bilinear") for im in images]
        masks = [
            _resize(m[None].astype(np.float32), (h, w), "nearest")[0].astype(np.uint8)
            for m in masks
        ]
    if cfg.crop_size > min(h, w):
        raise ContractError(
            f"crop size {cfg.crop_size} exceeds post-jitter image size {h}x{w}"
        )
    top = int(rng.integers(h - cfg.crop_size + 1))
    left = int(rng.integers(w - cfg.crop_size + 1))
    sl = (slice(top, top + cfg.crop_size), slice(left, left + cfg.crop_size))
    images = [np.ascontiguousarray(im[..., sl[0], sl[1]]) for im in images]
    masks = [np.ascontiguousarray(m[sl]) for m in masks]
    return images, masks


def augment(sample: Sample, cfg: AugmentationConfig, rng: np.random.Generator) -> Sample:
    """Random flip/rotation/scale-jitter/crop, identical for image and mask."""
    images, masks = _augment_arrays([sample.image], [sample.mask], cfg, rng)
    return Sample(image=images[0].astype(np.float32), mask=masks[0], id=sample.id)


def augment_bitemporal(
    sample: BitemporalSample, cfg: AugmentationConfig, rng: np.random.Generator
) -> BitemporalSample:
    """Same transform applied to both images and all masks of the pair."""
    masks = [sample.change_mask]
    has_sem = sample.semantic_t1 is not None
    if has_sem:
        masks += [sample.semantic_t1, sample.semantic_t2]
    images, masks = _augment_arrays([sample.image_t1, sample.image_t2], masks, cfg, rng)
    return BitemporalSample(
        image_t1=images[0].astype(np.float32),
        image_t2=images[1].astype(np.float32),
        change_mask=masks[0],
        semantic_t1=masks[1] if has_sem else None,
        semantic_t2=masks[2] if has_sem else None,
        id=sample.id,
    )
