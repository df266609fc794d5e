"""Dataset records, label remapping, augmentation, resizing and the
synthetic desk-scale dataset.

The 12-class label space collapses left/right body-part variants into one
class per part; source masks are integer-coded, with the code of a part
given by its (1-based) row position in the remap table, 0 reserved for
background and 255 for void.  A plain text mapping file (one
``name<TAB>label`` per line, ``#`` comments) can replace the built-in
table for masks exported with a different row order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import imageio
from .rng import RngStream

__all__ = [
    "VOID",
    "CLASS_NAMES",
    "REPORT_ORDER",
    "SampleRecord",
    "RemapTable",
    "remap_mask",
    "AugmentConfig",
    "augment",
    "bilinear_resize",
    "nearest_resize",
    "resize_pair",
    "synthetic_dataset",
    "save_dataset",
    "load_dataset",
    "rgb_to_hsv",
    "hsv_to_rgb",
]

VOID = 255

# Class name by label.
CLASS_NAMES = [
    "Background",
    "Hair",
    "Head",
    "Ear",
    "Eye",
    "Eyebrow",
    "Leg",
    "Arm",
    "Mouth",
    "Neck",
    "Nose",
    "Torso",
]

# Row order of the rendered evaluation report (foreground parts first).
REPORT_ORDER = [
    "Hair",
    "Head",
    "Ear",
    "Eye",
    "Eyebrow",
    "Leg",
    "Arm",
    "Mouth",
    "Neck",
    "Nose",
    "Torso",
    "Background",
]

# Grayscale weights used by the contrast and saturation jitters.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

# (source part name, merged class name, label). The right foot carries the
# leg label, like the left foot: the numeric label decides the class.
DEFAULT_REMAP_ROWS = (
    ("hair", "Hair", 1),
    ("head", "Head", 2),
    ("left_ear", "Ear", 3),
    ("left_eye", "Eye", 4),
    ("left_eyebrow", "Eyebrow", 5),
    ("left_foot", "Leg", 6),
    ("left_hand", "Arm", 7),
    ("left_lower_arm", "Arm", 7),
    ("left_lower_leg", "Leg", 6),
    ("left_upper_arm", "Arm", 7),
    ("left_upper_leg", "Leg", 6),
    ("right_ear", "Ear", 3),
    ("right_eye", "Eye", 4),
    ("right_eyebrow", "Eyebrow", 5),
    ("right_foot", "Leg", 6),
    ("right_hand", "Arm", 7),
    ("right_lower_arm", "Arm", 7),
    ("right_lower_leg", "Leg", 6),
    ("right_upper_arm", "Arm", 7),
    ("right_upper_leg", "Leg", 6),
    ("mouth", "Mouth", 8),
    ("neck", "Neck", 9),
    ("nose", "Nose", 10),
    ("torso", "Torso", 11),
    ("non_person_objects", "Background", 0),
    ("background", "Background", 0),
)


@dataclass
class SampleRecord:
    """One image/mask pair; image float [3, H, W] in [0, 1], mask uint8 [H, W]."""

    image: np.ndarray
    mask: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ValueError(f"image must be [3, H, W], got {self.image.shape}")
        if self.mask.shape != self.image.shape[1:]:
            raise ValueError(
                f"mask {self.mask.shape} does not match image {self.image.shape[1:]}"
            )

    @property
    def height(self) -> int:
        return self.image.shape[1]

    @property
    def width(self) -> int:
        return self.image.shape[2]


def _normalize_name(name: str) -> str:
    return "_".join(name.strip().lower().split())


class RemapTable:
    """Ordered source-name to (class name, label) table.

    The source integer code of a row is its 1-based position; code 0 is
    always background and 255 always void, regardless of the table.
    """

    def __init__(self, rows):
        self.rows = tuple((_normalize_name(n), cls, int(lbl)) for n, cls, lbl in rows)
        if not self.rows:
            raise ValueError("remap table has no rows")
        self.by_name = {}
        for name, cls, lbl in self.rows:
            if not 0 <= lbl <= 11:
                raise ValueError(f"label {lbl} for {name!r} outside 0..11")
            if name in self.by_name:
                raise ValueError(f"duplicate source name {name!r}")
            self.by_name[name] = (cls, lbl)

    @classmethod
    def default(cls) -> "RemapTable":
        return cls(DEFAULT_REMAP_ROWS)

    @classmethod
    def from_mapping_lines(cls, lines) -> "RemapTable":
        rows = []
        for lineno, line in enumerate(lines, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "\t" not in stripped:
                raise ValueError(f"mapping line {lineno}: expected name<TAB>label")
            name, _, value = stripped.partition("\t")
            try:
                label = int(value.strip())
            except ValueError:
                raise ValueError(f"mapping line {lineno}: label {value.strip()!r} is not an integer")
            rows.append((name, CLASS_NAMES[label] if 0 <= label <= 11 else "", label))
        return cls(rows)

    @classmethod
    def from_mapping_file(cls, path) -> "RemapTable":
        return cls.from_mapping_lines(Path(path).read_text(encoding="utf-8").splitlines())

    def mapping_lines(self):
        return [f"{name}\t{lbl}" for name, _, lbl in self.rows]

    def write_mapping_file(self, path) -> None:
        Path(path).write_text("\n".join(self.mapping_lines()) + "\n", encoding="utf-8")

    def label_of(self, source_name: str) -> int:
        name = _normalize_name(source_name)
        if name not in self.by_name:
            raise ValueError(f"unknown source part name {name!r}")
        return self.by_name[name][1]

    def source_code(self, source_name: str) -> int:
        name = _normalize_name(source_name)
        for i, (row_name, _, _) in enumerate(self.rows, start=1):
            if row_name == name:
                return i
        raise ValueError(f"unknown source part name {name!r}")

    def lut(self) -> np.ndarray:
        table = np.zeros(256, dtype=np.uint8)
        for i, (_, _, lbl) in enumerate(self.rows, start=1):
            table[i] = lbl
        table[VOID] = VOID
        return table


def remap_mask(src: np.ndarray, table: RemapTable, allow_unknown: bool = False) -> np.ndarray:
    """Relabel an integer-coded source mask into the 12-class space.

    Unknown source codes map to background when ``allow_unknown`` is set
    and raise (listing the offending codes) otherwise.
    """
    src = np.asarray(src)
    if src.min() < 0 or src.max() > 255:
        raise ValueError("source mask values must fit in 8 bits")
    src = src.astype(np.uint8)
    n_rows = len(table.rows)
    known = (src <= n_rows) | (src == VOID)
    if not known.all():
        if not allow_unknown:
            bad = sorted(int(v) for v in np.unique(src[~known]))
            raise ValueError(f"unknown source labels in mask: {bad}")
    return table.lut()[src]


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentConfig:
    """Jitter half-ranges for the training-time augmentation draws."""

    flip_prob: float = 0.5
    brightness: float = 0.25
    contrast: float = 0.25
    saturation: float = 0.25
    hue: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must lie in [0, 1]")
        for attr in ("brightness", "contrast", "saturation"):
            if not 0.0 <= getattr(self, attr) < 1.0:
                raise ValueError(f"{attr} must lie in [0, 1)")
        if not 0.0 <= self.hue < 0.5:
            raise ValueError("hue must lie in [0, 0.5)")


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorized RGB -> HSV for [3, H, W] arrays with values in [0, 1]."""
    r, g, b = rgb[0], rgb[1], rgb[2]
    maxc = rgb.max(axis=0)
    minc = rgb.min(axis=0)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    dsafe = np.where(delta > 0, delta, 1.0)
    rc = (maxc - r) / dsafe
    gc = (maxc - g) / dsafe
    bc = (maxc - b) / dsafe
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v])


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Vectorized HSV -> RGB, inverse of :func:`rgb_to_hsv`."""
    h, s, v = hsv[0], hsv[1], hsv[2]
    i = np.floor(h * 6.0).astype(np.int64) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def _luminance(image: np.ndarray) -> np.ndarray:
    return np.tensordot(LUMA_WEIGHTS, image, axes=1)


def augment(record: SampleRecord, cfg: AugmentConfig, rng: RngStream) -> SampleRecord:
    """Randomized horizontal flip plus photometric jitter.

    The flip mirrors image and mask together; brightness, contrast,
    saturation and hue touch the image only and the result is clamped to
    [0, 1] after every step.  The same five draws are consumed on every
    call so the stream stays aligned regardless of outcomes.
    """
    flip_u = float(rng.uniform(())[()])
    b = 1.0 + float(rng.uniform((), -cfg.brightness, cfg.brightness)[()])
    c = 1.0 + float(rng.uniform((), -cfg.contrast, cfg.contrast)[()])
    s = 1.0 + float(rng.uniform((), -cfg.saturation, cfg.saturation)[()])
    dh = float(rng.uniform((), -cfg.hue, cfg.hue)[()])

    image = record.image
    mask = record.mask
    if flip_u < cfg.flip_prob:
        image = image[:, :, ::-1].copy()
        mask = mask[:, ::-1].copy()
    else:
        image = image.copy()
        mask = mask.copy()

    if b != 1.0:
        image = np.clip(image * b, 0.0, 1.0)
    if c != 1.0:
        mean_lum = float(_luminance(image).mean())
        image = np.clip(mean_lum + c * (image - mean_lum), 0.0, 1.0)
    if s != 1.0:
        gray = _luminance(image)
        image = np.clip(gray + s * (image - gray), 0.0, 1.0)
    if dh != 0.0:
        hsv = rgb_to_hsv(image)
        hsv[0] = (hsv[0] + dh) % 1.0
        image = np.clip(hsv_to_rgb(hsv), 0.0, 1.0)
    return SampleRecord(image=image, mask=mask, source_id=record.source_id)


# ---------------------------------------------------------------------------
# resizing
# ---------------------------------------------------------------------------

def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of a [C, H, W] image using half-pixel centers."""
    c, h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.copy()
    sy = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (sy - y0)[None, :, None]
    wx = (sx - x0)[None, None, :]
    v00 = image[:, y0[:, None], x0[None, :]]
    v01 = image[:, y0[:, None], x1[None, :]]
    v10 = image[:, y1[:, None], x0[None, :]]
    v11 = image[:, y1[:, None], x1[None, :]]
    top = v00 * (1.0 - wx) + v01 * wx
    bot = v10 * (1.0 - wx) + v11 * wx
    return top * (1.0 - wy) + bot * wy


def nearest_resize(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resample; never blends label values."""
    h, w = mask.shape[-2], mask.shape[-1]
    if (h, w) == (out_h, out_w):
        return mask.copy()
    yi = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(np.intp), h - 1)
    xi = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(np.intp), w - 1)
    return mask[..., yi[:, None], xi[None, :]]


def resize_pair(record: SampleRecord, target: tuple[int, int]) -> SampleRecord:
    """Resize a record to ``target`` (H, W) by cover-scaling then center crop.

    The image is resampled bilinearly, the mask by nearest neighbor, so no
    new label values can appear.
    """
    th, tw = int(target[0]), int(target[1])
    if th % 32 or tw % 32:
        raise ValueError("target dims must be divisible by 32")
    if th < 32 or tw < 32:
        raise ValueError("target dims must be at least 32")
    h, w = record.height, record.width
    if (h, w) == (th, tw):
        return replace(record, image=record.image.copy(), mask=record.mask.copy())
    scale = max(th / h, tw / w)
    rh = max(th, math.ceil(h * scale))
    rw = max(tw, math.ceil(w * scale))
    image = bilinear_resize(record.image, rh, rw)
    mask = nearest_resize(record.mask, rh, rw)
    y0 = (rh - th) // 2
    x0 = (rw - tw) // 2
    return replace(
        record,
        image=np.ascontiguousarray(image[:, y0 : y0 + th, x0 : x0 + tw]),
        mask=np.ascontiguousarray(mask[y0 : y0 + th, x0 : x0 + tw]),
    )


# ---------------------------------------------------------------------------
# synthetic dataset
# ---------------------------------------------------------------------------

HEAD, LEG, ARM, TORSO = 2, 6, 7, 11

_BASE_COLORS = {
    HEAD: (0.90, 0.74, 0.58),
    TORSO: (0.80, 0.18, 0.20),
    ARM: (0.18, 0.68, 0.30),
    LEG: (0.20, 0.30, 0.80),
}


def _paint_rect(image, mask, label, color, y0, y1, x0, x1):
    h, w = mask.shape
    y0, y1 = max(0, int(y0)), min(h, int(y1))
    x0, x1 = max(0, int(x0)), min(w, int(x1))
    if y0 >= y1 or x0 >= x1:
        return
    image[:, y0:y1, x0:x1] = np.asarray(color)[:, None, None]
    mask[y0:y1, x0:x1] = label


def _paint_ellipse(image, mask, label, color, cy, cx, ry, rx):
    h, w = mask.shape
    yy, xx = np.ogrid[:h, :w]
    inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    image[:, inside] = np.asarray(color)[:, None]
    mask[inside] = label


def synthetic_dataset(n: int, seed: int, canvas: tuple[int, int] = (64, 64)):
    """Deterministic stick-figure scenes with exact masks.

    Each record places an elliptical head, a rectangular torso and thin
    rectangular arms and legs on a textured background, with per-record
    geometry and color jitter, yielding masks over {0, 2, 6, 7, 11}.
    """
    if n < 1:
        raise ValueError("need at least one record")
    h, w = int(canvas[0]), int(canvas[1])
    if h % 32 or w % 32:
        raise ValueError("canvas dims must be divisible by 32")
    root = RngStream(seed).child("synthetic")
    records = []
    for i in range(n):
        rng = root.child(str(i))
        image, mask = _paint_scene(rng, h, w)
        records.append(
            SampleRecord(image=image, mask=mask, source_id=f"synthetic-{seed}-{i:03d}")
        )
    return records


def _paint_scene(rng: RngStream, h: int, w: int):
    geo = rng.child("geometry")
    col = rng.child("color")

    base = col.uniform((3, 1, 1), 0.12, 0.42)
    yy = np.linspace(0.0, 2.0 * np.pi, h)[None, :, None]
    xx = np.linspace(0.0, 2.0 * np.pi, w)[None, None, :]
    phase = col.uniform((3, 1, 1), 0.0, 2.0 * np.pi)
    waves = 0.04 * np.sin(yy + phase) + 0.04 * np.cos(xx * 1.7 + phase)
    noise = col.normal((3, h, w), std=0.015)
    image = np.clip(base + waves + noise, 0.0, 1.0)
    mask = np.zeros((h, w), dtype=np.uint8)

    colors = {
        lbl: np.clip(np.asarray(c) + col.uniform((3,), -0.08, 0.08), 0.05, 0.98)
        for lbl, c in _BASE_COLORS.items()
    }

    cx = float(geo.uniform((), 0.40, 0.60)[()]) * w
    torso_w = float(geo.uniform((), 0.24, 0.32)[()]) * w
    torso_h = float(geo.uniform((), 0.28, 0.36)[()]) * h
    torso_top = float(geo.uniform((), 0.30, 0.36)[()]) * h
    torso_bot = torso_top + torso_h

    arm_w = float(geo.uniform((), 0.07, 0.10)[()]) * w
    arm_h = float(geo.uniform((), 0.24, 0.30)[()]) * h
    leg_w = float(geo.uniform((), 0.08, 0.11)[()]) * w
    leg_h = float(geo.uniform((), 0.26, 0.34)[()]) * h
    head_ry = float(geo.uniform((), 0.11, 0.15)[()]) * h
    head_rx = float(geo.uniform((), 0.10, 0.14)[()]) * w

    # Limbs first, torso and head painted over them.
    _paint_rect(image, mask, ARM, colors[ARM],
                torso_top, torso_top + arm_h,
                cx - torso_w / 2 - arm_w, cx - torso_w / 2)
    _paint_rect(image, mask, ARM, colors[ARM],
                torso_top, torso_top + arm_h,
                cx + torso_w / 2, cx + torso_w / 2 + arm_w)
    _paint_rect(image, mask, LEG, colors[LEG],
                torso_bot, torso_bot + leg_h,
                cx - torso_w / 2, cx - torso_w / 2 + leg_w)
    _paint_rect(image, mask, LEG, colors[LEG],
                torso_bot, torso_bot + leg_h,
                cx + torso_w / 2 - leg_w, cx + torso_w / 2)
    _paint_rect(image, mask, TORSO, colors[TORSO],
                torso_top, torso_bot, cx - torso_w / 2, cx + torso_w / 2)
    _paint_ellipse(image, mask, HEAD, colors[HEAD],
                   torso_top - head_ry * 0.95, cx, head_ry, head_rx)

    texture = rng.child("texture").normal((3, h, w), std=0.01)
    image = np.clip(image + texture, 0.0, 1.0)
    return image, mask


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

def save_dataset(records, directory) -> None:
    """Write records as ``images/<id>.png`` and ``masks/<id>.png``."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    for rec in records:
        if not rec.source_id:
            raise ValueError("records need a source_id to be saved")
        imageio.save_image(rec.image, directory / "images" / f"{rec.source_id}.png")
        imageio.save_mask(rec.mask, directory / "masks" / f"{rec.source_id}.png")


def load_dataset(directory):
    """Load records from an ``images/`` + ``masks/`` directory pair."""
    directory = Path(directory)
    image_dir = directory / "images"
    mask_dir = directory / "masks"
    if not image_dir.is_dir() or not mask_dir.is_dir():
        raise ValueError(f"{directory}: expected images/ and masks/ subdirectories")
    records = []
    for image_path in sorted(image_dir.glob("*.png")):
        mask_path = mask_dir / image_path.name
        if not mask_path.exists():
            raise ValueError(f"no mask for image {image_path.name}")
        records.append(
            SampleRecord(
                image=imageio.load_image(image_path),
                mask=imageio.load_mask(mask_path),
                source_id=image_path.stem,
            )
        )
    if not records:
        raise ValueError(f"{directory}: no PNG images found")
    return records
