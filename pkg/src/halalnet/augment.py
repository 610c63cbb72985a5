"""Stochastic training-image augmentation.

Eleven techniques run in a fixed order, each switched on independently with
the configured probability.  Geometry is done with backward-mapped bilinear
sampling and edge replication, and every technique hands back an image with
the input's dimensions, so augmented batches stack without surprises.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .resample import bilinear_sample, resize, upsample_field

TECHNIQUES = (
    "flip_lr",
    "flip_ud",
    "crop",
    "pad",
    "scale",
    "translate",
    "rotate",
    "shear",
    "warp",
    "brightness",
    "piecewise_affine",
)


@dataclass
class AugmentRanges:
    """Per-technique parameter bounds.

    Fractions are relative to the image dimension along the affected axis;
    angles are degrees; brightness is an additive delta on the 0..255 scale.
    """

    crop_frac: float = 0.10
    pad_frac: float = 0.10
    scale_lo: float = 0.85
    scale_hi: float = 1.15
    translate_frac: float = 0.10
    rotate_deg: float = 25.0
    shear_deg: float = 15.0
    warp_frac: float = 0.05
    warp_grid: int = 3
    brightness_delta: float = 40.0
    piecewise_frac: float = 0.03
    piecewise_grid: int = 4


class AugmentationPipeline:
    """Applies the technique list to images, driven by one random stream.

    The stream advances across calls, so repeated ``apply`` on the same
    image yields fresh draws, while two pipelines built with the same seed
    produce identical sequences.  Not safe to share across threads; give
    each worker its own instance.
    """

    def __init__(self, techniques=TECHNIQUES, probability: float = 0.5,
                 seed: int = 0, ranges: AugmentRanges | None = None):
        techniques = tuple(techniques)
        unknown = [t for t in techniques if t not in TECHNIQUES]
        if unknown:
            raise InvalidInputError(f"unknown augmentation techniques: {unknown}")
        if not 0.0 <= probability <= 1.0:
            raise InvalidInputError(f"probability {probability} outside [0, 1]")
        self.techniques = techniques
        self.probability = float(probability)
        self.ranges = ranges if ranges is not None else AugmentRanges()
        self.rng = np.random.default_rng(seed)
        self.last_applied: tuple[str, ...] = ()

    # -- public API --------------------------------------------------------

    def apply(self, img: np.ndarray) -> np.ndarray:
        arr = np.asarray(img)
        if arr.ndim not in (2, 3) or arr.size == 0:
            raise InvalidInputError(f"expected a 2-D or 3-D image, got shape {arr.shape}")
        work = arr.astype(np.float64)
        applied = []
        for name in self.techniques:
            if self.rng.random() < self.probability:
                work = getattr(self, "_" + name)(work)
                applied.append(name)
        self.last_applied = tuple(applied)
        if arr.dtype == np.uint8:
            return np.clip(np.floor(work + 0.5), 0, 255).astype(np.uint8)
        return work.astype(arr.dtype)

    def apply_pair(self, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.apply(a), self.apply(b)

    def preview(self, img: np.ndarray, n: int) -> list[np.ndarray]:
        if n < 1:
            raise InvalidInputError(f"preview count must be >= 1, got {n}")
        return [self.apply(img) for _ in range(n)]

    # -- techniques (float64 in, float64 out, dims preserved) ---------------

    def _flip_lr(self, img):
        return img[:, ::-1]

    def _flip_ud(self, img):
        return img[::-1]

    def _crop(self, img):
        h, w = img.shape[:2]
        fr = self.rng.uniform(0.0, self.ranges.crop_frac, size=4)
        top, bot = int(fr[0] * h), int(fr[1] * h)
        left, right = int(fr[2] * w), int(fr[3] * w)
        if top + bot >= h:
            top, bot = 0, 0
        if left + right >= w:
            left, right = 0, 0
        return resize(img[top:h - bot, left:w - right], h, w)

    def _pad(self, img):
        h, w = img.shape[:2]
        fr = self.rng.uniform(0.0, self.ranges.pad_frac, size=4)
        pads = [(int(fr[0] * h), int(fr[1] * h)), (int(fr[2] * w), int(fr[3] * w))]
        if img.ndim == 3:
            pads.append((0, 0))
        return resize(np.pad(img, pads, mode="edge"), h, w)

    def _affine(self, img, m00, m01, m10, m11, off_r=0.0, off_c=0.0):
        """Backward-map through a 2x2 matrix about the image center."""
        h, w = img.shape[:2]
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        rows, cols = np.meshgrid(np.arange(h, dtype=np.float64),
                                 np.arange(w, dtype=np.float64), indexing="ij")
        dr = rows - cy - off_r
        dc = cols - cx - off_c
        return bilinear_sample(img, m00 * dr + m01 * dc + cy, m10 * dr + m11 * dc + cx)

    def _scale(self, img):
        s = self.rng.uniform(self.ranges.scale_lo, self.ranges.scale_hi)
        inv = 1.0 / s
        return self._affine(img, inv, 0.0, 0.0, inv)

    def _translate(self, img):
        h, w = img.shape[:2]
        f = self.ranges.translate_frac
        dy = self.rng.uniform(-f, f) * h
        dx = self.rng.uniform(-f, f) * w
        return self._affine(img, 1.0, 0.0, 0.0, 1.0, off_r=dy, off_c=dx)

    def _rotate(self, img):
        theta = math.radians(self.rng.uniform(-self.ranges.rotate_deg,
                                              self.ranges.rotate_deg))
        c, s = math.cos(theta), math.sin(theta)
        return self._affine(img, c, -s, s, c)

    def _shear(self, img):
        lam = math.tan(math.radians(self.rng.uniform(-self.ranges.shear_deg,
                                                     self.ranges.shear_deg)))
        return self._affine(img, 1.0, 0.0, lam, 1.0)

    def _displace(self, img, grid, frac):
        h, w = img.shape[:2]
        disp = self.rng.uniform(-1.0, 1.0, size=(grid, grid, 2))
        disp[..., 0] *= frac * h
        disp[..., 1] *= frac * w
        dense = upsample_field(disp, h, w)
        rows, cols = np.meshgrid(np.arange(h, dtype=np.float64),
                                 np.arange(w, dtype=np.float64), indexing="ij")
        return bilinear_sample(img, rows + dense[..., 0], cols + dense[..., 1])

    def _warp(self, img):
        return self._displace(img, self.ranges.warp_grid, self.ranges.warp_frac)

    def _brightness(self, img):
        delta = self.rng.uniform(-self.ranges.brightness_delta,
                                 self.ranges.brightness_delta)
        return np.clip(img + delta, 0.0, 255.0)

    def _piecewise_affine(self, img):
        return self._displace(img, self.ranges.piecewise_grid, self.ranges.piecewise_frac)
