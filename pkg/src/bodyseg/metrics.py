"""Confusion accumulation, per-class Dice and dataset evaluation.

Dice for class c is 2*TP / (2*TP + FP + FN) over pixels; void pixels touch
no counter.  A class absent from both prediction and ground truth has an
undefined score (0/0), reported as NaN and excluded from aggregate means
rather than counted as 0 or 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CLASS_NAMES, REPORT_ORDER, VOID, bilinear_resize, nearest_resize
from .model import SegNet, mc_predict, softmax
from .rng import RngStream

__all__ = [
    "ConfusionCounts",
    "REFERENCE_DICE",
    "accumulate_confusion",
    "dice_scores",
    "EvalReport",
    "render_report",
    "render_report_full",
    "evaluate",
    "predict_mask",
    "working_size",
]

N_CLASSES = len(CLASS_NAMES)

# Reference per-class Dice from the original full-dataset training run.
# Desk-scale training cannot reproduce these numbers; they pin the report's
# row order and serve as formatting/ordering references only.
REFERENCE_DICE = {
    "Hair": 0.58,
    "Head": 0.60,
    "Ear": 0.54,
    "Eye": 0.62,
    "Eyebrow": 0.60,
    "Leg": 0.38,
    "Arm": 0.50,
    "Mouth": 0.62,
    "Neck": 0.52,
    "Nose": 0.57,
    "Torso": 0.54,
    "Background": 0.95,
}


@dataclass
class ConfusionCounts:
    """Per-class true-positive / false-positive / false-negative counters."""

    tp: np.ndarray = field(default_factory=lambda: np.zeros(N_CLASSES, dtype=np.int64))
    fp: np.ndarray = field(default_factory=lambda: np.zeros(N_CLASSES, dtype=np.int64))
    fn: np.ndarray = field(default_factory=lambda: np.zeros(N_CLASSES, dtype=np.int64))
    pixels: int = 0
    samples: int = 0

    def merge(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            pixels=self.pixels + other.pixels,
            samples=self.samples + other.samples,
        )


def accumulate_confusion(
    pred: np.ndarray, gt: np.ndarray, counts: ConfusionCounts
) -> ConfusionCounts:
    """Fold one prediction/ground-truth pair into ``counts`` (in place)."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if pred.min() < 0 or pred.max() >= N_CLASSES:
        raise ValueError(f"prediction labels must lie in 0..{N_CLASSES - 1}")
    valid = gt != VOID
    p = pred[valid].astype(np.int64)
    g = gt[valid].astype(np.int64)
    if g.size and g.max() >= N_CLASSES:
        raise ValueError(f"ground-truth labels must lie in 0..{N_CLASSES - 1} or be {VOID}")
    hit = p == g
    counts.tp += np.bincount(p[hit], minlength=N_CLASSES)
    counts.fp += np.bincount(p[~hit], minlength=N_CLASSES)
    counts.fn += np.bincount(g[~hit], minlength=N_CLASSES)
    counts.pixels += int(valid.sum())
    counts.samples += 1
    return counts


@dataclass
class EvalReport:
    """Per-class Dice scores; NaN marks an undefined (0/0) entry."""

    dice: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    pixels: int
    samples: int

    def dice_of(self, class_name: str) -> float:
        return float(self.dice[CLASS_NAMES.index(class_name)])

    def mean_dice(self, foreground_only: bool = False) -> float:
        """Mean over defined classes; NaN entries are excluded."""
        values = self.dice[1:] if foreground_only else self.dice
        defined = values[~np.isnan(values)]
        return float(defined.mean()) if defined.size else float("nan")


def dice_scores(counts: ConfusionCounts) -> EvalReport:
    denom = 2 * counts.tp + counts.fp + counts.fn
    with np.errstate(invalid="ignore", divide="ignore"):
        dice = np.where(denom > 0, 2.0 * counts.tp / np.where(denom > 0, denom, 1), np.nan)
    return EvalReport(
        dice=dice,
        tp=counts.tp.copy(),
        fp=counts.fp.copy(),
        fn=counts.fn.copy(),
        pixels=counts.pixels,
        samples=counts.samples,
    )


def render_report(report: EvalReport) -> str:
    """Tab-separated per-part table, two decimals, undefined as ``n/a``."""
    lines = ["Part Name\tDice"]
    for name in REPORT_ORDER:
        d = report.dice[CLASS_NAMES.index(name)]
        lines.append(f"{name}\t{'n/a' if np.isnan(d) else format(d, '.2f')}")
    return "\n".join(lines) + "\n"


def render_report_full(report: EvalReport) -> str:
    """Machine-readable variant: full-precision Dice plus raw counters."""
    lines = ["part\tdice\ttp\tfp\tfn"]
    for name in REPORT_ORDER:
        i = CLASS_NAMES.index(name)
        d = report.dice[i]
        dice_text = "nan" if np.isnan(d) else repr(float(d))
        lines.append(f"{name}\t{dice_text}\t{report.tp[i]}\t{report.fp[i]}\t{report.fn[i]}")
    lines.append(f"# pixels={report.pixels} samples={report.samples}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# model evaluation
# ---------------------------------------------------------------------------

def working_size(h: int, w: int) -> tuple[int, int]:
    """Smallest network-compatible size covering (h, w)."""
    return (max(32, -(-h // 32) * 32), max(32, -(-w // 32) * 32))


def predict_mask(
    model: SegNet,
    image: np.ndarray,
    passes: int = 1,
    rng: RngStream | None = None,
    with_variance: bool = False,
):
    """Class mask for one [3, H, W] image at its native resolution.

    Off-grid sizes are stretched to the next multiple of 32 for the
    forward pass and the outputs are stretched back by nearest neighbor.
    Ties in the argmax go to the lowest class index.  With
    ``with_variance`` returns (mask, per-class variance) instead.
    """
    c, h, w = image.shape
    wh, ww = working_size(h, w)
    net_in = image if (wh, ww) == (h, w) else bilinear_resize(image, wh, ww)
    x = net_in[None].astype(model.dtype)
    if passes == 1 and rng is None:
        prob = softmax(model.forward(x, mode="eval"), axis=1)[0]
        var = np.zeros_like(prob)
    else:
        if rng is None:
            raise ValueError("Monte-Carlo prediction needs an RngStream")
        prob, var = mc_predict(model, x, passes, rng)
    pred = prob.argmax(axis=0).astype(np.uint8)
    if (wh, ww) != (h, w):
        pred = nearest_resize(pred, h, w)
        if with_variance:
            var = np.stack([nearest_resize(v, h, w) for v in var])
    if with_variance:
        return pred, var
    return pred


def evaluate(model: SegNet, dataset, passes: int = 1, seed: int = 0) -> EvalReport:
    """Predict every record and score the accumulated confusion counts."""
    if not dataset:
        raise ValueError("dataset is empty")
    root = RngStream(seed).child("evaluate")
    counts = ConfusionCounts()
    for i, rec in enumerate(dataset):
        rng = root.child(str(i)) if passes > 1 else None
        pred = predict_mask(model, rec.image, passes=passes, rng=rng)
        accumulate_confusion(pred, rec.mask, counts)
    return dice_scores(counts)
