"""One-shot classification against a control set, plus pair verification.

A control set maps each class label to reference images already converted to
network space.  A query is scored against every reference with the twin
network; per-class scores are aggregated (mean by default) and the best
class wins, with ties going to the lexicographically smallest label.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import pnm, siamese
from .errors import DataError, DegenerateHistogramError, InvalidInputError
from .imaging import SegmentationParams, segment_cut
from .resample import resize_u8
from .training import to_network_input

AGGREGATES = ("mean", "max")


@dataclass
class ControlSet:
    """class label -> list of reference images in network space."""

    references: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.references:
            raise InvalidInputError("control set needs at least one class")
        for label, images in self.references.items():
            if not images:
                raise InvalidInputError(f"control class {label!r} has no images")

    def labels(self) -> list[str]:
        return sorted(self.references)


def prepare_query(img: np.ndarray, input_shape, segment: bool = True,
                  params: SegmentationParams | None = None) -> np.ndarray:
    """8-bit image to a network-space array at the model resolution.

    With ``segment`` the cut is isolated first; an image whose histogram
    cannot be thresholded falls back to the raw pixels.
    """
    img = np.asarray(img)
    if segment:
        try:
            _, img = segment_cut(img, params)
        except DegenerateHistogramError:
            pass
    h, w, c = input_shape
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], c, axis=2)
    if img.shape[2] != c:
        raise InvalidInputError(f"query has {img.shape[2]} channels, network wants {c}")
    if img.shape[:2] != (h, w):
        img = resize_u8(img, h, w)
    return to_network_input(img)


def load_control_set(manifest_path, input_shape, segment: bool = True,
                     params: SegmentationParams | None = None) -> ControlSet:
    """Read `<class-label> <image-path>` lines and preprocess each image.

    Paths are resolved relative to the manifest's directory; blank lines and
    ``#`` comments are skipped.
    """
    base = os.path.dirname(os.path.abspath(manifest_path))
    refs: dict[str, list[np.ndarray]] = {}
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise DataError(f"{manifest_path}:{lineno}: expected '<class> <path>'")
            label, rel = parts
            path = rel if os.path.isabs(rel) else os.path.join(base, rel)
            if not os.path.exists(path):
                raise DataError(f"{manifest_path}:{lineno}: no such image {path}")
            img = pnm.read_pnm(path)
            refs.setdefault(label, []).append(
                prepare_query(img, input_shape, segment, params))
    if not refs:
        raise DataError(f"{manifest_path}: control manifest lists no images")
    return ControlSet(refs)


def classify(model: siamese.SiameseModel, img: np.ndarray, control: ControlSet,
             aggregate: str = "mean") -> tuple[str, dict[str, float]]:
    """Best-matching class for one network-space query, with the score map."""
    if aggregate not in AGGREGATES:
        raise InvalidInputError(f"aggregate must be one of {AGGREGATES}, got {aggregate!r}")
    img = np.asarray(img, dtype=np.float32)
    scores: dict[str, float] = {}
    for label in control.labels():
        images = control.references[label]
        batch = np.stack([img] * len(images))
        refs = np.stack(images).astype(np.float32)
        probs = siamese.forward_pair(model, batch, refs)
        scores[label] = float(np.mean(probs) if aggregate == "mean" else np.max(probs))
    best = max(sorted(scores), key=lambda k: scores[k])
    return best, scores


def verify(model: siamese.SiameseModel, img_a: np.ndarray, img_b: np.ndarray,
           threshold: float = 0.5) -> bool:
    """True when the pair probability clears the threshold."""
    return bool(siamese.forward_pair(model, img_a, img_b) >= threshold)
