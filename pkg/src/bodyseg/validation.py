"""Input validation for the estimator-facing API.

These helpers normalize the array layouts users hand to
:class:`bodyseg.BodyPartSegmenter` and fail early with actionable messages.
"""

from __future__ import annotations

import numpy as np

from .data import VOID

__all__ = ["check_image_array", "check_image_batch", "check_mask_batch"]

N_CLASSES = 12


def check_image_array(image) -> np.ndarray:
    """Validate a single [3, H, W] image with values in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected image of shape [3, H, W], got {image.shape}")
    if not np.isfinite(image).all():
        raise ValueError("image contains non-finite values")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return image


def check_image_batch(X) -> np.ndarray:
    """Validate images as [N, 3, H, W]; accepts a list of [3, H, W] arrays."""
    if isinstance(X, (list, tuple)):
        items = [check_image_array(item) for item in X]
        if not items:
            raise ValueError("empty image batch")
        shapes = {item.shape for item in items}
        if len(shapes) > 1:
            raise ValueError(f"images disagree on shape: {sorted(shapes)}")
        return np.stack(items)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        return check_image_array(X)[None]
    if X.ndim != 4 or X.shape[1] != 3:
        raise ValueError(f"expected images of shape [N, 3, H, W], got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty image batch")
    for item in X:
        check_image_array(item)
    return X


def check_mask_batch(y, images: np.ndarray) -> np.ndarray:
    """Validate masks as [N, H, W] with labels in 0..11 or void."""
    if isinstance(y, (list, tuple)):
        y = np.stack([np.asarray(m) for m in y]) if y else np.empty((0,))
    y = np.asarray(y)
    if y.ndim == 2:
        y = y[None]
    expected = (images.shape[0],) + images.shape[2:]
    if y.shape != expected:
        raise ValueError(f"expected masks of shape {expected}, got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError(f"masks must be integer-valued, got dtype {y.dtype}")
    values = np.unique(y)
    legal = (values < N_CLASSES) | (values == VOID)
    if (values < 0).any() or not legal.all():
        bad = sorted(int(v) for v in values[~legal | (values < 0)])
        raise ValueError(f"mask labels must lie in 0..{N_CLASSES - 1} or be {VOID}: got {bad}")
    return y.astype(np.uint8)
