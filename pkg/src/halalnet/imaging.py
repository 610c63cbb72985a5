"""Classical image processing: the cut-segmentation pipeline and its pieces.

Images are numpy arrays in row-major (H, W) or (H, W, 3) layout with uint8
channels at module boundaries; binary masks are boolean (H, W) arrays.
All conversions to 8 bits round half-up and clamp to [0, 255].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateHistogramError, InvalidInputError

# Full-range BT.601 RGB -> YCbCr matrix and offsets.
_YCBCR_MATRIX = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCBCR_OFFSET = np.array([0.0, 128.0, 128.0])

CHANNEL_INDEX = {"y": 0, "cb": 1, "cr": 2}


def _round_u8(x: np.ndarray) -> np.ndarray:
    """Round half-up, clamp to [0, 255], cast to uint8."""
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def _check_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError(f"expected a 3-channel image, got shape {img.shape}")
    return img


def _check_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 2:
        raise InvalidInputError(f"expected a single-channel image, got shape {img.shape}")
    return img


def rgb_to_ycbcr(img: np.ndarray) -> np.ndarray:
    """Full-range BT.601 transform, rounded half-up and clamped."""
    img = _check_rgb(img)
    out = img.astype(np.float64) @ _YCBCR_MATRIX.T + _YCBCR_OFFSET
    return _round_u8(out)


def ycbcr_to_rgb(img: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_ycbcr` (same rounding rules)."""
    img = _check_rgb(img)
    ycc = img.astype(np.float64) - _YCBCR_OFFSET
    out = ycc @ np.linalg.inv(_YCBCR_MATRIX).T
    return _round_u8(out)


def sigma_for_kernel(kernel_size: int) -> float:
    """Conventional size-to-sigma rule: 0.3*((k-1)/2 - 1) + 0.8."""
    return 0.3 * ((kernel_size - 1) / 2 - 1) + 0.8


def gaussian_kernel_1d(kernel_size: int, sigma: float | None = None) -> np.ndarray:
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise InvalidInputError(f"kernel size must be odd and >= 1, got {kernel_size}")
    if sigma is None:
        sigma = sigma_for_kernel(kernel_size)
    r = kernel_size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(
    img: np.ndarray,
    kernel_size: int = 15,
    sigma: float | None = None,
    border: str = "edge",
) -> np.ndarray:
    """Separable Gaussian blur per channel.

    uint8 input gives uint8 output (round half-up); float input stays float.
    `border` is "edge" (replication, the pipeline default) or "wrap".
    """
    img = np.asarray(img)
    if img.ndim not in (2, 3):
        raise InvalidInputError(f"expected (H,W) or (H,W,C) image, got {img.shape}")
    if border not in ("edge", "wrap"):
        raise InvalidInputError(f"unknown border mode {border!r}")
    kernel = gaussian_kernel_1d(kernel_size, sigma)
    r = kernel_size // 2

    was_u8 = img.dtype == np.uint8
    work = img.astype(np.float64)
    squeeze = work.ndim == 2
    if squeeze:
        work = work[:, :, None]

    for axis in (0, 1):
        pad = [(0, 0)] * 3
        pad[axis] = (r, r)
        padded = np.pad(work, pad, mode=border)
        acc = np.zeros_like(work)
        for i, kv in enumerate(kernel):
            if axis == 0:
                acc += kv * padded[i : i + work.shape[0], :, :]
            else:
                acc += kv * padded[:, i : i + work.shape[1], :]
        work = acc

    if squeeze:
        work = work[:, :, 0]
    return _round_u8(work) if was_u8 else work


def otsu_threshold(gray: np.ndarray) -> int:
    """Smallest threshold maximizing between-class variance over 256 bins.

    Classes are {value <= t} and {value > t}.
    """
    gray = _check_gray(gray)
    hist = np.bincount(gray.astype(np.uint8).ravel(), minlength=256).astype(np.float64)
    return otsu_from_histogram(hist)


def otsu_from_histogram(hist: np.ndarray) -> int:
    hist = np.asarray(hist, dtype=np.float64)
    if hist.shape != (256,):
        raise InvalidInputError(f"expected a 256-bin histogram, got {hist.shape}")
    if np.count_nonzero(hist) < 2:
        raise DegenerateHistogramError("histogram holds fewer than two gray levels")
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    s0 = np.cumsum(hist * levels)
    total, total_sum = w0[-1], s0[-1]
    w1 = total - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = s0 / w0
        mu1 = (total_sum - s0) / w1
        var_between = w0 * w1 * (mu0 - mu1) ** 2
    var_between[~np.isfinite(var_between)] = 0.0
    return int(np.argmax(var_between))  # argmax takes the smallest maximizing t


def binarize(gray: np.ndarray, threshold: int) -> np.ndarray:
    """Foreground where value > threshold."""
    return _check_gray(gray) > threshold


@dataclass(frozen=True)
class StructuringElement:
    """Centered square or ellipse neighborhood of odd size."""

    shape: str = "square"
    size: int = 5

    def __post_init__(self):
        if self.shape not in ("square", "ellipse"):
            raise InvalidInputError(f"unknown structuring element shape {self.shape!r}")
        if self.size < 1 or self.size % 2 == 0:
            raise InvalidInputError(f"size must be odd and >= 1, got {self.size}")

    def offsets(self) -> list[tuple[int, int]]:
        r = self.size // 2
        offs = []
        for di in range(-r, r + 1):
            for dj in range(-r, r + 1):
                if self.shape == "square" or r == 0 or di * di + dj * dj <= r * r:
                    offs.append((di, dj))
        return offs


def _shift_reduce(mask: np.ndarray, se: StructuringElement, fold: str) -> np.ndarray:
    """OR (dilate) or AND (erode) of shifted copies; off-image is background."""
    if mask.dtype != np.bool_:
        mask = mask.astype(bool)
    r = se.size // 2
    padded = np.pad(mask, r, mode="constant", constant_values=False)
    h, w = mask.shape
    out = np.zeros_like(mask) if fold == "any" else np.ones_like(mask)
    for di, dj in se.offsets():
        view = padded[r + di : r + di + h, r + dj : r + dj + w]
        out = (out | view) if fold == "any" else (out & view)
    return out


def dilate(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    return _shift_reduce(mask, se, "any")


def erode(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    return _shift_reduce(mask, se, "all")


def morph_close(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Dilation then erosion: fills small holes in the foreground."""
    return erode(dilate(mask, se), se)


def morph_open(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Erosion then dilation: removes small foreground speckle."""
    return dilate(erode(mask, se), se)


@dataclass(frozen=True)
class SegmentationParams:
    blur_kernel: int = 15
    blur_sigma: float | None = None  # None: sigma_for_kernel rule
    channel: str = "cr"
    se: StructuringElement = StructuringElement("square", 5)
    invert: bool = False

    def __post_init__(self):
        if self.channel not in CHANNEL_INDEX:
            raise InvalidInputError(f"unknown channel {self.channel!r}")


def segment_cut(
    img: np.ndarray, params: SegmentationParams | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Run the full segmentation chain on a 3-channel image.

    blur -> YCbCr -> chroma channel -> Otsu -> binarize -> close -> open,
    then zero the background of the original image.  Returns (mask, masked).
    Raises DegenerateHistogramError when thresholding is impossible; callers
    may fall back to an all-foreground mask.
    """
    if params is None:
        params = SegmentationParams()
    img = _check_rgb(img)
    blurred = gaussian_blur(img, params.blur_kernel, params.blur_sigma)
    ycc = rgb_to_ycbcr(blurred)
    plane = ycc[:, :, CHANNEL_INDEX[params.channel]]
    t = otsu_threshold(plane)
    mask = binarize(plane, t)
    if params.invert:
        mask = ~mask
    mask = morph_close(mask, params.se)
    mask = morph_open(mask, params.se)
    masked = np.where(mask[:, :, None], img, 0).astype(np.uint8)
    return mask, masked


def apply_mask(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero out background pixels."""
    img = np.asarray(img)
    if img.shape[:2] != mask.shape:
        raise InvalidInputError(
            f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    if img.ndim == 2:
        return np.where(mask, img, 0).astype(img.dtype)
    return np.where(mask[:, :, None], img, 0).astype(img.dtype)


def mask_to_image(mask: np.ndarray) -> np.ndarray:
    """Boolean mask as a {0,255} uint8 image (PGM serialization form)."""
    return np.where(mask, 255, 0).astype(np.uint8)


def image_to_mask(img: np.ndarray) -> np.ndarray:
    return _check_gray(img) > 127
