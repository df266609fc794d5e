"""Body-part segmentation with an encoder-decoder network, learned dropout
and Monte-Carlo uncertainty estimation, implemented on plain numpy.

High-level entry points:

* :class:`BodyPartSegmenter` - sklearn-style fit/predict estimator.
* :func:`bodyseg.training.train` / :class:`TrainConfig` - the training loop.
* :func:`bodyseg.metrics.evaluate` - per-class Dice evaluation.
* ``bodyseg`` console script - train / eval / segment / remap / synth /
  gradcheck subcommands.
"""

from .data import (
    AugmentConfig,
    CLASS_NAMES,
    RemapTable,
    SampleRecord,
    augment,
    load_dataset,
    remap_mask,
    resize_pair,
    save_dataset,
    synthetic_dataset,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .estimator import BodyPartSegmenter
from .metrics import (
    ConfusionCounts,
    EvalReport,
    accumulate_confusion,
    dice_scores,
    evaluate,
    predict_mask,
    render_report,
    render_report_full,
)
from .model import SegNet, build_model, mc_predict, softmax
from .rng import RngStream
from .training import DivergenceError, TrainConfig, TrainResult, total_loss, train
from .visualize import colorize, mask_from_colors, uncertainty_map

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "BodyPartSegmenter",
    "CLASS_NAMES",
    "CheckpointError",
    "ConfusionCounts",
    "DivergenceError",
    "EvalReport",
    "RemapTable",
    "RngStream",
    "SampleRecord",
    "SegNet",
    "TrainConfig",
    "TrainResult",
    "accumulate_confusion",
    "augment",
    "build_model",
    "colorize",
    "dice_scores",
    "evaluate",
    "load_checkpoint",
    "load_dataset",
    "mask_from_colors",
    "mc_predict",
    "predict_mask",
    "remap_mask",
    "render_report",
    "render_report_full",
    "resize_pair",
    "save_checkpoint",
    "save_dataset",
    "softmax",
    "synthetic_dataset",
    "total_loss",
    "train",
    "uncertainty_map",
]
