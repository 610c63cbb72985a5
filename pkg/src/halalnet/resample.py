"""Bilinear sampling helpers shared by augmentation and inference.

All geometric operations use backward mapping: for each output pixel we
compute a (possibly fractional) source coordinate and sample it bilinearly.
Coordinates outside the image clamp to the nearest edge pixel, which gives
edge replication for free.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


def bilinear_sample(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample ``img`` (H, W[, C]) at fractional coordinates.

    ``rows`` and ``cols`` are float arrays of identical shape; the result has
    that shape plus the channel axis if the input had one.
    """
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]
    if img.ndim != 3:
        raise InvalidInputError(f"expected 2-D or 3-D image, got shape {img.shape}")
    h, w = img.shape[:2]
    r0 = np.floor(rows)
    c0 = np.floor(cols)
    fr = (rows - r0)[..., None]
    fc = (cols - c0)[..., None]
    r0 = r0.astype(np.intp)
    c0 = c0.astype(np.intp)
    r0c = np.clip(r0, 0, h - 1)
    r1c = np.clip(r0 + 1, 0, h - 1)
    c0c = np.clip(c0, 0, w - 1)
    c1c = np.clip(c0 + 1, 0, w - 1)
    top = img[r0c, c0c] * (1.0 - fc) + img[r0c, c1c] * fc
    bot = img[r1c, c0c] * (1.0 - fc) + img[r1c, c1c] * fc
    out = top * (1.0 - fr) + bot * fr
    return out[..., 0] if squeeze else out


def resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize using half-pixel centers; float in, float out.

    Resizing to the input dimensions reproduces the input exactly.
    """
    if out_h < 1 or out_w < 1:
        raise InvalidInputError(f"bad target size {out_h}x{out_w}")
    h, w = img.shape[:2]
    src_r = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    src_c = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    rows, cols = np.meshgrid(src_r, src_c, indexing="ij")
    return bilinear_sample(np.asarray(img, dtype=np.float64), rows, cols)


def resize_u8(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize an 8-bit image, rounding half up back to uint8."""
    out = resize(np.asarray(img, dtype=np.float64), out_h, out_w)
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def upsample_field(field: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Stretch a coarse (g, g, 2) control grid to a dense (H, W, 2) field.

    Corner control points land exactly on the image corners so the grid
    spans the full frame.
    """
    g = field.shape[0]
    if g < 2:
        raise InvalidInputError("control grid needs at least 2 points per side")
    rr = np.linspace(0.0, g - 1.0, out_h)
    cc = np.linspace(0.0, g - 1.0, out_w)
    rows, cols = np.meshgrid(rr, cc, indexing="ij")
    return bilinear_sample(np.asarray(field, dtype=np.float64), rows, cols)
