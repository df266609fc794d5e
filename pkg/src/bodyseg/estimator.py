"""Scikit-learn style estimator facade over the segmentation pipeline.

``BodyPartSegmenter`` exposes the train/predict cycle through the familiar
``fit`` / ``predict`` / ``predict_proba`` / ``score`` methods and the
``get_params`` / ``set_params`` protocol, so it drops into sklearn
tooling (``clone``, grid search, pipelines) without this package depending
on sklearn itself.
"""

from __future__ import annotations

import inspect

import numpy as np

from .data import SampleRecord
from .metrics import evaluate, predict_mask
from .model import mc_predict, softmax
from .rng import RngStream
from .training import TrainConfig, train
from .validation import check_image_batch, check_mask_batch

__all__ = ["BodyPartSegmenter"]


class BodyPartSegmenter:
    """Trainable 12-class body-part segmenter with optional Monte-Carlo
    uncertainty.

    Parameters mirror :class:`bodyseg.training.TrainConfig`; ``mc_samples``
    controls how many stochastic passes ``predict_proba`` averages (1 means
    a deterministic pass).
    """

    def __init__(
        self,
        steps: int = 200,
        lr: float = 0.05,
        momentum: float = 0.9,
        batch_size: int = 2,
        seed: int = 1,
        input_size: tuple[int, int] = (64, 64),
        w_factor: float = 1e-6,
        d_factor: float = 1e-5,
        mc_samples: int = 1,
    ):
        self.steps = steps
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.seed = seed
        self.input_size = input_size
        self.w_factor = w_factor
        self.d_factor = d_factor
        self.mc_samples = mc_samples

    # -- sklearn parameter protocol -----------------------------------------

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [name for name in sig.parameters if name != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "BodyPartSegmenter":
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(
                    f"invalid parameter {key!r} for BodyPartSegmenter; "
                    f"valid parameters are {sorted(valid)}"
                )
            setattr(self, key, value)
        return self

    # -- estimator API -------------------------------------------------------

    def fit(self, X, y) -> "BodyPartSegmenter":
        """Train on images ``X`` [N, 3, H, W] with label masks ``y`` [N, H, W]."""
        X = check_image_batch(X)
        y = check_mask_batch(y, X)
        records = [
            SampleRecord(image=img, mask=mask, source_id=f"fit-{i}")
            for i, (img, mask) in enumerate(zip(X, y))
        ]
        cfg = TrainConfig(
            steps=self.steps,
            lr=self.lr,
            momentum=self.momentum,
            batch_size=self.batch_size,
            seed=self.seed,
            input_size=tuple(self.input_size),
            w_factor=self.w_factor,
            d_factor=self.d_factor,
        )
        result = train(cfg, records)
        self.model_ = result.model
        self.loss_curve_ = [row[1] for row in result.rows]
        self.classes_ = np.arange(self.model_.class_count)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("this BodyPartSegmenter instance is not fitted yet")

    def predict(self, X) -> np.ndarray:
        """Label masks [N, H, W] at the native resolution of ``X``."""
        self._check_fitted()
        X = check_image_batch(X)
        rng = RngStream(self.seed).child("predict")
        out = []
        for i, image in enumerate(X):
            out.append(
                predict_mask(
                    self.model_,
                    image,
                    passes=self.mc_samples,
                    rng=rng.child(str(i)) if self.mc_samples > 1 else None,
                )
            )
        return np.stack(out)

    def predict_proba(self, X) -> np.ndarray:
        """Class probabilities [N, 12, H, W]; images must be /32-sized."""
        self._check_fitted()
        X = check_image_batch(X)
        rng = RngStream(self.seed).child("predict_proba")
        probs = []
        for i, image in enumerate(X):
            x = image[None]
            if self.mc_samples > 1:
                mean, _ = mc_predict(self.model_, x, self.mc_samples, rng.child(str(i)))
                probs.append(mean)
            else:
                probs.append(softmax(self.model_.forward(x, mode="eval"), axis=1)[0])
        return np.stack(probs)

    def predict_uncertainty(self, X):
        """Monte-Carlo (mean, variance) pairs, both [N, 12, H, W]."""
        self._check_fitted()
        if self.mc_samples < 2:
            raise ValueError("predict_uncertainty needs mc_samples >= 2")
        X = check_image_batch(X)
        rng = RngStream(self.seed).child("predict_uncertainty")
        means, variances = [], []
        for i, image in enumerate(X):
            mean, var = mc_predict(self.model_, image[None], self.mc_samples, rng.child(str(i)))
            means.append(mean)
            variances.append(var)
        return np.stack(means), np.stack(variances)

    def score(self, X, y) -> float:
        """Mean Dice over defined classes."""
        self._check_fitted()
        X = check_image_batch(X)
        y = check_mask_batch(y, X)
        records = [
            SampleRecord(image=img, mask=mask, source_id=f"score-{i}")
            for i, (img, mask) in enumerate(zip(X, y))
        ]
        report = evaluate(self.model_, records, passes=self.mc_samples, seed=self.seed)
        return report.mean_dice()
