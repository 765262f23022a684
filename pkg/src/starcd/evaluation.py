"""Metrics and evaluation: pooled confusion counts, IoU/F1, sliding-window
inference for large tiles, error-map rendering, and method comparison
reports.

IoU and F1 are computed from counts pooled over the whole evaluation set,
the usual convention for change detection."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .data import BitemporalSample
from .errors import ContractError
from .model import ChangeStar, change_probability, pcc_predict


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp,
            self.fn + other.fn, self.tn + other.tn,
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def accumulate(
    counts: ConfusionCounts, pred: np.ndarray, truth: np.ndarray
) -> ConfusionCounts:
    """Add the per-pixel confusion tallies of one prediction/truth pair."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ContractError(
            f"pred {pred.shape} and truth {truth.shape} shapes differ"
        )
    p = pred.astype(bool)
    t = truth.astype(bool)
    return counts + ConfusionCounts(
        tp=int(np.count_nonzero(p & t)),
        fp=int(np.count_nonzero(p & ~t)),
        fn=int(np.count_nonzero(~p & t)),
        tn=int(np.count_nonzero(~p & ~t)),
    )


def iou(counts: ConfusionCounts) -> float:
    denom = counts.tp + counts.fp + counts.fn
    return counts.tp / denom if denom else 0.0


def f1(counts: ConfusionCounts) -> float:
    denom = 2 * counts.tp + counts.fp + counts.fn
    return 2 * counts.tp / denom if denom else 0.0


# ---------------------------------------------------------------------------
# Sliding-window inference
# ---------------------------------------------------------------------------

def sliding_window_predict(
    prob_fn: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    image_t1: torch.Tensor,
    image_t2: torch.Tensor,
    window: int,
    stride: int,
    threshold: float = 0.5,
) -> np.ndarray:
    """Tile a large pair, average overlapping probabilities, and threshold.

    ``prob_fn`` maps a (1 x C x h x w, 1 x C x h x w) window pair to a
    1 x 1 x h x w probability map. An image smaller than the window is
    processed as a single window.
    """
    if stride > window:
        raise ContractError(f"stride {stride} exceeds window {window}")
    if image_t1.shape != image_t2.shape:
        raise ContractError("bitemporal images must share shape")
    _, h, w = image_t1.shape
    win_h, win_w = min(window, h), min(window, w)

    def starts(extent: int, win: int) -> list[int]:
        if extent <= win:
            return [0]
        s = list(range(0, extent - win + 1, stride))
        if s[-1] != extent - win:
            s.append(extent - win)
        return s

    prob_sum = np.zeros((h, w), dtype=np.float64)
    weight = np.zeros((h, w), dtype=np.float64)
    for top in starts(h, win_h):
        for left in starts(w, win_w):
            sl = (slice(top, top + win_h), slice(left, left + win_w))
            x1 = image_t1[None, :, sl[0], sl[1]]
            x2 = image_t2[None, :, sl[0], sl[1]]
            p = prob_fn(x1, x2)[0, 0].detach().cpu().numpy()
            prob_sum[sl] += p
            weight[sl] += 1.0
    return (prob_sum / weight > threshold).astype(np.uint8)


# ---------------------------------------------------------------------------
# Error maps
# ---------------------------------------------------------------------------

_COLORS = {
    "tp": (0, 255, 0),     # green
    "fp": (255, 0, 0),     # red
    "fn": (0, 0, 255),     # blue
    "tn": (0, 0, 0),       # background
}


def render_error_map(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-pixel TP/FP/FN/TN categories as an H x W x 3 uint8 image."""
    if pred.shape != truth.shape:
        raise ContractError("pred and truth shapes differ")
    p = pred.astype(bool)
    t = truth.astype(bool)
    out = np.zeros((*pred.shape, 3), dtype=np.uint8)
    out[p & t] = _COLORS["tp"]
    out[p & ~t] = _COLORS["fp"]
    out[~p & t] = _COLORS["fn"]
    return out


# ---------------------------------------------------------------------------
# Method evaluation and comparison reports
# ---------------------------------------------------------------------------

def _to_tensor(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img))


@torch.no_grad()
def predict_change(
    model: ChangeStar, sample: BitemporalSample, method: str, threshold: float = 0.5
) -> np.ndarray:
    """Binary change map for one pair via the change head or PCC."""
    x1 = _to_tensor(sample.image_t1)[None]
    x2 = _to_tensor(sample.image_t2)[None]
    if method == "changestar":
        prob = change_probability(model, x1, x2)
        return (prob[0, 0].numpy() > threshold).astype(np.uint8)
    if method == "pcc":
        return pcc_predict(model, x1, x2, threshold=threshold)[0, 0].numpy()
    raise ContractError(f"unknown method {method!r}")


@torch.no_grad()
def evaluate_change(
    model: ChangeStar,
    pairs: Iterable[BitemporalSample],
    method: str = "changestar",
    threshold: float = 0.5,
) -> tuple[ConfusionCounts, dict]:
    """Pooled change-detection metrics over an evaluation set."""
    was_training = model.training
    model.eval()
    counts = ConfusionCounts()
    n = 0
    for s in pairs:
        pred = predict_change(model, s, method, threshold)
        counts = accumulate(counts, pred, s.change_mask)
        n += 1
    if was_training:
        model.train()
    if n == 0:
        raise ContractError("evaluation set is empty")
    return counts, {"iou": iou(counts), "f1": f1(counts), "n_pairs": n}


def compare_report(
    models: dict[str, tuple[ChangeStar, str]],
    pairs: Sequence[BitemporalSample],
    out_dir: str | Path | None = None,
    metrics_log: Sequence[dict] | None = None,
    n_error_maps: int = 4,
) -> dict:
    """Evaluate several (model, method) entries on one set and report.

    ``models`` maps an entry name to (model, method) with method in
    {"changestar", "pcc"}. Emits a JSON report plus per-entry error-map PNGs
    and, given a training metrics log, the dual learning-curve plot of the
    change head versus comparison of the model's own semantic predictions.
    """
    if not pairs:
        raise ContractError("evaluation set is empty")
    report: dict = {"entries": {}, "n_pairs": len(pairs)}
    per_entry_preds: dict[str, list[np.ndarray]] = {}
    for name, (model, method) in models.items():
        counts = ConfusionCounts()
        preds = []
        model.eval()
        for s in pairs:
            pred = predict_change(model, s, method)
            counts = accumulate(counts, pred, s.change_mask)
            preds.append(pred)
        per_entry_preds[name] = preds
        report["entries"][name] = {
            "method": method,
            "counts": asdict(counts),
            "iou": iou(counts),
            "f1": f1(counts),
        }
    names = list(models)
    report["deltas"] = {
        f"{a}-{b}": {
            "iou": report["entries"][a]["iou"] - report["entries"][b]["iou"],
            "f1": report["entries"][a]["f1"] - report["entries"][b]["f1"],
        }
        for i, a in enumerate(names)
        for b in names[i + 1:]
    }

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(json.dumps(report, indent=2))
        from PIL import Image

        for name, preds in per_entry_preds.items():
            for i in range(min(n_error_maps, len(pairs))):
                em = render_error_map(preds[i], pairs[i].change_mask)
                Image.fromarray(em).save(out_dir / f"error_map_{name}_{pairs[i].id}.png")
        if metrics_log is not None:
            plot_learning_curves(metrics_log, out_dir / "learning_curves.png")
    return report


def plot_learning_curves(metrics_log: Sequence[dict], path: str | Path) -> None:
    """Dual curve: change-head IoU vs comparison of own semantic predictions."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    evals = [r for r in metrics_log if "eval" in r]
    if not evals:
        return
    steps = [r["step"] for r in evals]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, metric in zip(axes, ("iou", "f1")):
        ax.plot(steps, [r["eval"][f"change_{metric}"] for r in evals],
                label="change head", marker="o", ms=3)
        ax.plot(steps, [r["eval"][f"pcc_{metric}"] for r in evals],
                label="semantic comparison", marker="s", ms=3)
        ax.set_xlabel("step")
        ax.set_ylabel(metric.upper())
        ax.legend()
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
