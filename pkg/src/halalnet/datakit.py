"""Dataset manifests, pool preparation, and the synthetic image generator.

The real dataset is private, so desk-scale work runs on synthetic images.
Class A ("halal") shows a bright red curved band across a skin-colored
ellipse, standing in for a visible cut: its red-difference channel sits far
above both the skin and the warm background, which is exactly the contrast
the segmentation chain keys on.  Class B shows the same ellipse with a dark
intact contour and a cooler background.  The differing backgrounds are a
deliberate confound: raw images can be told apart by background alone, while
segmented ones force attention to the cut region.

Everything here is deterministic given the spec seed, down to the bytes on
disk.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import pnm, seeds
from .errors import DegenerateHistogramError, InvalidInputError, ManifestError
from .imaging import SegmentationParams, rgb_to_ycbcr, segment_cut
from .resample import resize_u8
from .training import DatasetPools

CLASSES = ("halal", "non-halal")
VISIBILITY_TAGS = ("clear", "blurred", "bloodied", "dark", "obstructed", "side")

MANIFEST_HEADER = ("path", "class", "visibility", "segmented")

decode_image = pnm.read_pnm
encode_image = pnm.write_pnm


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestRecord:
    path: str  # relative to the manifest's directory unless absolute
    cls: str
    visibility: str = "clear"
    segmented: bool = False


@dataclass
class DatasetManifest:
    root: str
    records: list[ManifestRecord] = field(default_factory=list)

    def resolve(self, rec: ManifestRecord) -> str:
        return rec.path if os.path.isabs(rec.path) else os.path.join(self.root, rec.path)

    def by_class(self, cls: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.cls == cls]


def _check_record(rec: ManifestRecord, where: str) -> None:
    if rec.cls not in CLASSES:
        raise ManifestError(f"{where}: unknown class {rec.cls!r} (expected one of {CLASSES})")
    if rec.visibility not in VISIBILITY_TAGS:
        raise ManifestError(
            f"{where}: unknown visibility tag {rec.visibility!r} "
            f"(expected one of {VISIBILITY_TAGS})")


def load_manifest(path) -> DatasetManifest:
    """Parse a `path,class,visibility,segmented` CSV and validate every row."""
    root = os.path.dirname(os.path.abspath(path))
    manifest = DatasetManifest(root=root)
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return manifest
    start = 1 if [c.strip() for c in rows[0]] == list(MANIFEST_HEADER) else 0
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 4:
            raise ManifestError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
        rel, cls, vis, seg = (c.strip() for c in row)
        where = f"{path}:{lineno}"
        if seg not in ("0", "1"):
            raise ManifestError(f"{where}: segmented flag must be 0 or 1, got {seg!r}")
        rec = ManifestRecord(path=rel, cls=cls, visibility=vis, segmented=seg == "1")
        _check_record(rec, where)
        if rec.path in seen:
            raise ManifestError(f"{where}: duplicate path {rec.path!r}")
        seen.add(rec.path)
        if not os.path.exists(manifest.resolve(rec)):
            raise ManifestError(f"{where}: no such image {manifest.resolve(rec)}")
        manifest.records.append(rec)
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write records sorted by path, so load-then-save is idempotent."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for rec in sorted(manifest.records, key=lambda r: r.path):
        _check_record(rec, path)
        writer.writerow([rec.path, rec.cls, rec.visibility, int(rec.segmented)])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class SyntheticSpec:
    """Knobs for the generator; defaults give a learnable but noisy task."""

    seed: int = 0
    size: int = 96
    count_a: int = 220
    count_b: int = 220
    noise: float = 5.0
    band_frac: float = 0.11  # band width as a fraction of image size
    jitter: float = 0.04     # geometry jitter as a fraction of image size

    def __post_init__(self):
        if self.size < 32:
            raise InvalidInputError(f"size must be >= 32, got {self.size}")
        if self.count_a < 1 or self.count_b < 1:
            raise InvalidInputError("per-class counts must be >= 1")
        if self.noise < 0:
            raise InvalidInputError(f"noise must be >= 0, got {self.noise}")


_SPEC_KEYS = {"seed", "size", "count_a", "count_b", "noise", "band_frac", "jitter"}


def synthetic_spec_from_mapping(scope: dict, source: str = "<spec>") -> SyntheticSpec:
    """Build a SyntheticSpec from raw key -> string values."""
    from . import configfile

    configfile.check_keys(scope, _SPEC_KEYS, source)
    kw = {}
    for key in ("seed", "size", "count_a", "count_b"):
        if key in scope:
            kw[key] = configfile.as_int(scope[key], key)
    for key in ("noise", "band_frac", "jitter"):
        if key in scope:
            kw[key] = configfile.as_float(scope[key], key)
    return SyntheticSpec(**kw)


_BG_A = np.array([120.0, 90.0, 70.0])     # warm brown; Cr ~ 145
_BG_B = np.array([80.0, 90.0, 105.0])     # cool gray-blue; Cr ~ 122
_SKIN = np.array([215.0, 170.0, 140.0])   # Cr ~ 153
_BAND = np.array([200.0, 30.0, 40.0])     # bright red; Cr ~ 212
_CONTOUR = np.array([30.0, 30.0, 35.0])   # dark intact edge


def _ellipse_frame(size: int, rng: np.random.Generator, jitter: float):
    s = float(size)
    cx = s / 2.0 + rng.uniform(-jitter, jitter) * s
    cy = s / 2.0 + rng.uniform(-jitter, jitter) * s
    ax = s * rng.uniform(0.34, 0.42)
    ay = s * rng.uniform(0.26, 0.33)
    theta = rng.uniform(-0.3, 0.3)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    r2 = (u / ax) ** 2 + (v / ay) ** 2
    return r2, (xx, yy, cx, cy, ax)


def _render(spec: SyntheticSpec, rng: np.random.Generator, with_band: bool):
    size = spec.size
    r2, (xx, yy, cx, cy, ax) = _ellipse_frame(size, rng, spec.jitter)
    ellipse = r2 <= 1.0

    base = _BG_A if with_band else _BG_B
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = base + rng.uniform(-10.0, 10.0, size=3)
    img[ellipse] = _SKIN + rng.uniform(-10.0, 10.0, size=3)

    if with_band:
        width = max(3.0, spec.band_frac * size + rng.uniform(-1.0, 1.0))
        tilt = rng.uniform(-0.25, 0.25)
        curve = rng.uniform(-0.5, 0.5)
        midline = cy + tilt * (xx - cx) + curve * ((xx - cx) ** 2) / size
        feature = (np.abs(yy - midline) <= width / 2.0) & (r2 <= 0.88)
        color = _BAND
    else:
        # lower arc of the ellipse boundary, a thin intact contour
        feature = (r2 >= 0.80) & (r2 <= 1.0) & (yy >= cy)
        color = _CONTOUR
    img[feature] = color + rng.uniform(-8.0, 8.0, size=3)

    if spec.noise > 0:
        img += rng.normal(0.0, spec.noise, size=img.shape)
    u8 = np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)
    return u8, feature


def mask_relpath(image_relpath: str) -> str:
    stem = os.path.splitext(os.path.basename(image_relpath))[0]
    return os.path.join("masks", stem + ".pgm")


def generate_synthetic(spec: SyntheticSpec, out_dir) -> DatasetManifest:
    """Write images, ground-truth feature masks, and a manifest under out_dir."""
    rng = seeds.rng(spec.seed, "synth")
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    manifest = DatasetManifest(root=os.path.abspath(out_dir))
    plan = [("a", spec.count_a, "halal", True), ("b", spec.count_b, "non-halal", False)]
    for prefix, count, cls, with_band in plan:
        for i in range(count):
            rel = os.path.join("images", f"{prefix}_{i:04d}.ppm")
            img, feature = _render(spec, rng, with_band)
            encode_image(img, os.path.join(out_dir, rel))
            mask_img = np.where(feature, 255, 0).astype(np.uint8)
            encode_image(mask_img, os.path.join(out_dir, mask_relpath(rel)))
            manifest.records.append(ManifestRecord(path=rel, cls=cls))
    save_manifest(manifest, os.path.join(out_dir, "manifest.csv"))
    return manifest


def mean_gray_inside_mask(img: np.ndarray, mask: np.ndarray) -> float:
    y = rgb_to_ycbcr(img)[..., 0].astype(np.float64)
    return float(y[mask.astype(bool)].mean())


# ---------------------------------------------------------------------------
# pools


@dataclass
class PoolStats:
    total: int = 0
    segmentation_failures: int = 0
    per_class: dict = field(default_factory=dict)


def prepare_pools(manifest: DatasetManifest, params: SegmentationParams | None = None,
                  segmented_prob: float = 2.0 / 3.0,
                  target_size: int | None = None) -> tuple[DatasetPools, PoolStats]:
    """Load every record into raw and segmented pools.

    Records flagged as already segmented go straight to the segmented pool.
    For raw records the segmentation chain runs here; images whose histogram
    cannot be thresholded stay raw-only and are counted.  ``target_size``
    resizes everything (after segmentation) to a square network resolution.
    """
    pools = DatasetPools(segmented_prob=segmented_prob)
    stats = PoolStats()

    def fit(img: np.ndarray) -> np.ndarray:
        if target_size is not None and img.shape[:2] != (target_size, target_size):
            return resize_u8(img, target_size, target_size)
        return img

    for rec in manifest.records:
        img = decode_image(manifest.resolve(rec))
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        halal = rec.cls == "halal"
        stats.total += 1
        stats.per_class[rec.cls] = stats.per_class.get(rec.cls, 0) + 1
        if rec.segmented:
            (pools.seg_halal if halal else pools.seg_nonhalal).append(fit(img))
            continue
        (pools.raw_halal if halal else pools.raw_nonhalal).append(fit(img))
        try:
            _, masked = segment_cut(img, params)
        except DegenerateHistogramError:
            stats.segmentation_failures += 1
            continue
        (pools.seg_halal if halal else pools.seg_nonhalal).append(fit(masked))
    return pools, stats
