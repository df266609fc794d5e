"""PNG ingestion and export.

Images are 8-bit RGB; masks are 8-bit single-channel with the pixel value
used directly as the label (255 = void).  Anything else is rejected with a
descriptive error rather than silently converted.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

__all__ = ["load_image", "save_image", "load_mask", "save_mask", "save_rgb"]


def load_image(path) -> np.ndarray:
    """Read an 8-bit RGB PNG as float64 [3, H, W] scaled to [0, 1]."""
    with Image.open(path) as im:
        if im.mode != "RGB":
            raise ValueError(
                f"{path}: expected an 8-bit RGB image, got mode {im.mode!r}"
            )
        arr = np.asarray(im, dtype=np.uint8)
    return arr.astype(np.float64).transpose(2, 0, 1) / 255.0


def save_image(image: np.ndarray, path) -> None:
    """Write a float [3, H, W] image in [0, 1] as an 8-bit RGB PNG."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected image [3, H, W], got {image.shape}")
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    save_rgb(arr.transpose(1, 2, 0), path)


def save_rgb(rgb: np.ndarray, path) -> None:
    """Write an uint8 [H, W, 3] array as an 8-bit RGB PNG."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError(f"expected uint8 [H, W, 3], got {rgb.shape} {rgb.dtype}")
    Image.fromarray(rgb, mode="RGB").save(Path(path), format="PNG")


def load_mask(path) -> np.ndarray:
    """Read an 8-bit single-channel PNG as a uint8 [H, W] label mask."""
    with Image.open(path) as im:
        if im.mode != "L":
            raise ValueError(
                f"{path}: expected an 8-bit single-channel mask, got mode {im.mode!r}"
            )
        arr = np.asarray(im, dtype=np.uint8)
    return arr.copy()


def save_mask(mask: np.ndarray, path) -> None:
    """Write a uint8 [H, W] label mask as an 8-bit single-channel PNG."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"expected mask [H, W], got {mask.shape}")
    if mask.dtype != np.uint8:
        if mask.min() < 0 or mask.max() > 255:
            raise ValueError("mask values must fit in 8 bits")
        mask = mask.astype(np.uint8)
    Image.fromarray(mask, mode="L").save(Path(path), format="PNG")
