"""SGD training loop with the dropout-regularized objective.

The objective is mean softmax cross-entropy over supervised pixels plus,
for each of the two dropout sites, a penalty coupling the learned drop
probability to the squared norm of the weights consuming the dropped
activations.  Optimization is plain SGD with momentum; every source of
randomness (shuffling, dropout noise, augmentation) is derived from the
config seed, so identical configs reproduce identical loss curves and
checkpoints byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import layers
from .checkpoint import save_checkpoint
from .data import AugmentConfig, SampleRecord, augment, resize_pair
from .model import REGULARIZER_SITES, SegNet, build_model
from .rng import RngStream

__all__ = [
    "TrainConfig",
    "TrainResult",
    "DivergenceError",
    "sgd_momentum_step",
    "total_loss",
    "train",
    "LOSS_CSV_HEADER",
]

LOSS_CSV_HEADER = "step,loss,p_center,p_output"


class DivergenceError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class TrainConfig:
    steps: int = 200
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 2
    seed: int = 1
    input_size: tuple[int, int] = (64, 64)
    w_factor: float = 1e-6
    d_factor: float = 1e-5
    checkpoint_every: int = 0
    augment: AugmentConfig | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.steps < 0:
            raise ValueError("step count must be >= 0")
        h, w = self.input_size
        if h % 32 or w % 32:
            raise ValueError("input size must be divisible by 32")


@dataclass
class TrainResult:
    model: SegNet
    rows: list  # (step, loss, p_center, p_output)
    checkpoint_path: Path | None = None
    loss_csv_path: Path | None = None


def sgd_momentum_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    lr: float,
    momentum: float,
) -> None:
    """In-place update: v <- momentum*v + g; w <- w - lr*v."""
    for name, p in params.items():
        g = grads[name]
        v = velocity[name]
        if g.shape != p.shape or v.shape != p.shape:
            raise ValueError(f"shape mismatch for {name}")
        v *= momentum
        v += g
        p -= lr * v


def _regularizer_terms(model: SegNet, dataset_size: int, w_factor: float, d_factor: float):
    """(value, weight grad, p_logit grad) per dropout site."""
    out = []
    for site, weight_name, channels in REGULARIZER_SITES:
        value, dw, dpl = layers.concrete_dropout_regularizer(
            model.params[f"{site}.p_logit"][0],
            model.params[weight_name],
            channels,
            dataset_size,
            w_factor=w_factor,
            d_factor=d_factor,
        )
        out.append((site, weight_name, value, dw, dpl))
    return out


def total_loss(
    model: SegNet,
    images: np.ndarray,
    masks: np.ndarray,
    dataset_size: int,
    rng: RngStream,
    w_factor: float = 1e-6,
    d_factor: float = 1e-5,
) -> float:
    """Objective value on one batch: cross-entropy plus both site penalties.

    Pure with respect to the model: dropout noise comes from ``rng`` and
    batch-norm running statistics are left untouched, so a fixed seed and
    batch always produce the same value.
    """
    logits = model.forward(images, mode="train", rng=rng, update_stats=False)
    model._tape = None
    ce, _ = layers.softmax_cross_entropy_forward(logits, masks)
    reg = sum(term[2] for term in _regularizer_terms(model, dataset_size, w_factor, d_factor))
    return float(ce + reg)


def _prepare(dataset, input_size) -> list[SampleRecord]:
    th, tw = input_size
    out = []
    for rec in dataset:
        if (rec.height, rec.width) != (th, tw):
            rec = resize_pair(rec, (th, tw))
        out.append(rec)
    return out


def train(cfg: TrainConfig, dataset, out_dir=None) -> TrainResult:
    """Run ``cfg.steps`` SGD steps over seeded shuffled minibatches.

    When ``out_dir`` is given, writes ``loss.csv``, a final
    ``checkpoint.bin`` and (with ``checkpoint_every``) periodic
    ``checkpoint-<step>.bin`` snapshots there.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    records = _prepare(dataset, cfg.input_size)
    n = len(records)

    model = build_model(cfg.seed)
    velocity = {name: np.zeros_like(p) for name, p in model.params.items()}
    root = RngStream(cfg.seed)
    shuffle_rng = root.child("shuffle")
    aug_rng = root.child("augment")
    step_rng = root.child("dropout")

    order: list[int] = []
    epoch = 0
    rows = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    for step in range(1, cfg.steps + 1):
        while len(order) < cfg.batch_size:
            order.extend(shuffle_rng.child(str(epoch)).permutation(n).tolist())
            epoch += 1
        batch_ids = order[: cfg.batch_size]
        del order[: cfg.batch_size]

        batch = [records[j] for j in batch_ids]
        if cfg.augment is not None:
            batch = [
                augment(rec, cfg.augment, aug_rng.child(f"{step}.{pos}"))
                for pos, rec in enumerate(batch)
            ]
        images = np.stack([rec.image for rec in batch])
        masks = np.stack([rec.mask for rec in batch])

        model.zero_grads()
        try:
            logits = model.forward(images, mode="train", rng=step_rng.child(str(step)))
            ce, ce_cache = layers.softmax_cross_entropy_forward(logits, masks)
            loss = ce
            for site, weight_name, value, dw, dpl in _regularizer_terms(
                model, n, cfg.w_factor, cfg.d_factor
            ):
                loss += value
                model.grads[weight_name] += dw
                model.grads[f"{site}.p_logit"][0] += dpl
        except (ZeroDivisionError, FloatingPointError, OverflowError) as exc:
            raise DivergenceError(f"objective blew up at step {step}: {exc}") from exc
        if not np.isfinite(loss):
            raise DivergenceError(f"loss became non-finite at step {step}")
        model.backward(layers.softmax_cross_entropy_backward(ce_cache))
        sgd_momentum_step(model.params, model.grads, velocity, cfg.lr, cfg.momentum)

        rows.append(
            (
                step,
                float(loss),
                model.drop_probability("dropout_center"),
                model.drop_probability("dropout_output"),
            )
        )
        if out_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(model, out_dir / f"checkpoint-{step:06d}.bin")

    result = TrainResult(model=model, rows=rows)
    if out_dir is not None:
        result.checkpoint_path = out_dir / "checkpoint.bin"
        save_checkpoint(model, result.checkpoint_path)
        result.loss_csv_path = out_dir / "loss.csv"
        result.loss_csv_path.write_text(loss_csv_text(rows), encoding="utf-8")
    return result


def loss_csv_text(rows) -> str:
    lines = [LOSS_CSV_HEADER]
    for step, loss, p_center, p_output in rows:
        lines.append(f"{step},{repr(loss)},{repr(p_center)},{repr(p_output)}")
    return "\n".join(lines) + "\n"
