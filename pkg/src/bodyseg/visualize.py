"""Colorized masks and uncertainty maps.

The palette assigns one fixed, mutually distinct RGB triple per class
(background black, void dark gray), so colorized masks can be decoded back
to labels exactly.
"""

from __future__ import annotations

import numpy as np

from .data import VOID

__all__ = ["PALETTE", "VOID_COLOR", "colorize", "mask_from_colors", "uncertainty_map"]

# Label -> RGB. Order matches CLASS_NAMES.
PALETTE = np.array(
    [
        (0, 0, 0),        # Background
        (128, 64, 0),     # Hair
        (255, 204, 153),  # Head
        (255, 255, 0),    # Ear
        (0, 255, 255),    # Eye
        (255, 0, 255),    # Eyebrow
        (0, 0, 255),      # Leg
        (0, 200, 0),      # Arm
        (255, 0, 0),      # Mouth
        (255, 128, 0),    # Neck
        (128, 0, 255),    # Nose
        (200, 0, 100),    # Torso
    ],
    dtype=np.uint8,
)

VOID_COLOR = np.array((64, 64, 64), dtype=np.uint8)


def colorize(mask: np.ndarray) -> np.ndarray:
    """Render a label mask as an RGB uint8 [H, W, 3] image."""
    mask = np.asarray(mask)
    legal = (mask < len(PALETTE)) | (mask == VOID)
    if not legal.all():
        bad = sorted(int(v) for v in np.unique(mask[~legal]))
        raise ValueError(f"labels out of range for palette: {bad}")
    full = np.zeros((256, 3), dtype=np.uint8)
    full[: len(PALETTE)] = PALETTE
    full[VOID] = VOID_COLOR
    return full[mask]


def mask_from_colors(rgb: np.ndarray) -> np.ndarray:
    """Invert :func:`colorize`; raises on colors outside the palette."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected [H, W, 3] RGB array, got {rgb.shape}")
    # Pack RGB into a single integer key per pixel for table lookup.
    key = (
        rgb[..., 0].astype(np.int64) << 16
        | rgb[..., 1].astype(np.int64) << 8
        | rgb[..., 2].astype(np.int64)
    )
    table = {}
    for label, color in enumerate(PALETTE):
        table[int(color[0]) << 16 | int(color[1]) << 8 | int(color[2])] = label
    table[int(VOID_COLOR[0]) << 16 | int(VOID_COLOR[1]) << 8 | int(VOID_COLOR[2])] = VOID
    mask = np.zeros(key.shape, dtype=np.uint8)
    seen = np.zeros(key.shape, dtype=bool)
    for packed, label in table.items():
        hit = key == packed
        mask[hit] = label
        seen |= hit
    if not seen.all():
        raise ValueError("image contains colors outside the label palette")
    return mask


def uncertainty_map(variance: np.ndarray) -> np.ndarray:
    """Grayscale rendering of predictive variance.

    Averages the per-class variance over the class axis and min-max
    normalizes to 0..255; a constant map (max == min) renders as all-zero.
    """
    variance = np.asarray(variance, dtype=np.float64)
    if variance.ndim != 3:
        raise ValueError(f"expected variance [classes, H, W], got {variance.shape}")
    per_pixel = variance.mean(axis=0)
    lo = float(per_pixel.min())
    hi = float(per_pixel.max())
    if hi <= lo:
        return np.zeros(per_pixel.shape, dtype=np.uint8)
    scaled = (per_pixel - lo) / (hi - lo) * 255.0
    return np.rint(scaled).astype(np.uint8)
