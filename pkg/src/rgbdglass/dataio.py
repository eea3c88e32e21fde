"""RGB-D samples, on-disk layout, depth conventions, augmentation and dataset statistics.

Disk layout under a dataset root::

    images/<id>.png   8-bit RGB
    depths/<id>.png   16-bit grayscale, 0 = no measurement
    masks/<id>.png    8-bit grayscale, 0 or 255
    train.txt, test.txt   one id per line

In memory, planes are numpy arrays in image layout: ``rgb`` is [H,W,3] uint8,
``depth`` [H,W] uint16, ``missing`` and ``mask`` [H,W] uint8 in {0,1}.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import DataError
from .tensor import interp_matrix, nearest_indices

logger = logging.getLogger(__name__)

DEPTH_MAX = 2 ** 16 - 1
REFERENCE_SPLIT_SIZES = {"train": 2400, "test": 609}
SUBDIRS = ("images", "depths", "masks")


@dataclass
class Sample:
    id: str
    rgb: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    missing: np.ndarray = None

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.uint8)
        self.depth = np.asarray(self.depth, dtype=np.uint16)
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.missing is None:
            self.missing = missing_map(self.depth)
        self.missing = np.asarray(self.missing, dtype=np.uint8)
        h, w = self.depth.shape
        if self.rgb.shape != (h, w, 3) or self.mask.shape != (h, w) or self.missing.shape != (h, w):
            raise DataError(
                f"sample {self.id}: plane shapes disagree "
                f"(rgb {self.rgb.shape}, depth {self.depth.shape}, mask {self.mask.shape})"
            )
        if not np.isin(self.mask, (0, 1)).all():
            raise DataError(f"sample {self.id}: mask is not binary")
        if not np.array_equal(self.missing, missing_map(self.depth)):
            raise DataError(f"sample {self.id}: missing map disagrees with zero-depth pixels")

    @property
    def size(self):
        return self.depth.shape


# --------------------------------------------------------------------------
# depth conventions


def normalize_depth(raw, valid):
    """Min-max scale valid depths to [1, 65535]; invalid pixels become 0.

    A constant valid depth maps to 1 so that 0 keeps meaning "missing".
    """
    raw = np.asarray(raw, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    out = np.zeros(raw.shape, dtype=np.uint16)
    if not valid.any():
        return out
    vals = raw[valid]
    lo, hi = vals.min(), vals.max()
    if hi == lo:
        out[valid] = 1
        return out
    scaled = 1 + np.rint((vals - lo) / (hi - lo) * (DEPTH_MAX - 1))
    out[valid] = np.clip(scaled, 1, DEPTH_MAX).astype(np.uint16)
    return out


def missing_map(depth):
    """1 where the depth sensor returned nothing (stored as 0), else 0."""
    return (np.asarray(depth) == 0).astype(np.uint8)


# --------------------------------------------------------------------------
# disk layout


def _paths(root, sample_id):
    return tuple(os.path.join(root, sub, f"{sample_id}.png") for sub in SUBDIRS)


def write_sample(root, sample):
    for sub in SUBDIRS:
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    p_rgb, p_depth, p_mask = _paths(root, sample.id)
    Image.fromarray(sample.rgb).save(p_rgb)
    Image.fromarray(sample.depth.astype("<u2")).save(p_depth)
    Image.fromarray((sample.mask * 255).astype(np.uint8)).save(p_mask)


def read_sample(root, sample_id):
    p_rgb, p_depth, p_mask = _paths(root, sample_id)
    with Image.open(p_rgb) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    with Image.open(p_depth) as im:
        if im.mode not in ("I;16", "I;16L", "I;16B", "I", "L"):
            raise DataError(f"{p_depth}: unexpected depth image mode {im.mode}")
        depth = np.asarray(im).astype(np.uint16)
    with Image.open(p_mask) as im:
        mask = (np.asarray(im.convert("L")) >= 128).astype(np.uint8)
    return Sample(sample_id, rgb, depth, mask)


def write_manifest(root, split, ids):
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, f"{split}.txt"), "w") as f:
        for i in ids:
            f.write(f"{i}\n")


def read_manifest(root, split):
    path = os.path.join(root, f"{split}.txt")
    if not os.path.exists(path):
        raise DataError(f"manifest {path} not found")
    with open(path) as f:
        return [line.strip() for line in f if line.strip()]


@dataclass
class DatasetManifest:
    root: str
    split: str
    ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.ids)

    def load(self, sample_id):
        return read_sample(self.root, sample_id)

    def samples(self):
        return [self.load(i) for i in self.ids]


def validate_manifest(root, split, expect_reference_sizes=False):
    """Check every listed id has its image, depth and mask; raise DataError listing failures."""
    ids = read_manifest(root, split)
    problems = []
    for i in ids:
        absent = [sub for sub, p in zip(SUBDIRS, _paths(root, i)) if not os.path.exists(p)]
        if absent:
            problems.append(f"{i}: missing {', '.join(absent)}")
    if problems:
        raise DataError(f"{split} manifest has {len(problems)} incomplete ids:\n" + "\n".join(problems))
    if expect_reference_sizes and len(ids) != REFERENCE_SPLIT_SIZES.get(split, len(ids)):
        logger.warning("%s split has %d ids, expected %d", split, len(ids), REFERENCE_SPLIT_SIZES[split])
    return DatasetManifest(root, split, ids)


# --------------------------------------------------------------------------
# resizing helpers (same conventions as the tensor kernel)


def resize_bilinear_np(plane, h, w):
    """Bilinear, corner-aligned resize of the leading two axes of a float array."""
    plane = np.asarray(plane, dtype=np.float64)
    hi, wi = plane.shape[:2]
    if (hi, wi) == (h, w):
        return plane.copy()
    rh, rw = interp_matrix(h, hi), interp_matrix(w, wi)
    if plane.ndim == 2:
        return rh @ plane @ rw.T
    # channels-last: resize rows, then columns, per channel
    chw = plane.transpose(2, 0, 1)
    return (rh @ chw @ rw.T).transpose(1, 2, 0)


def resize_nearest_np(plane, h, w):
    hi, wi = plane.shape[:2]
    return plane[nearest_indices(h, hi)][:, nearest_indices(w, wi)]


# --------------------------------------------------------------------------
# network-ready planes


@dataclass
class Planes:
    """Float planes in [C,H,W] layout: rgb and depth in [0,1], missing and mask in {0,1}."""

    rgb: np.ndarray
    depth: np.ndarray
    missing: np.ndarray
    mask: np.ndarray
    offset: tuple = (0, 0)
    flipped: bool = False


def _stack(rgb, depth, missing, mask, **info):
    return Planes(
        rgb=np.ascontiguousarray(rgb.transpose(2, 0, 1)),
        depth=np.ascontiguousarray(depth[None]),
        missing=np.ascontiguousarray(missing[None].astype(np.float64)),
        mask=np.ascontiguousarray(mask[None].astype(np.float64)),
        **info,
    )


def eval_planes(sample, size):
    """Deterministic resize to ``size`` x ``size``; no crop, no flip."""
    rgb = resize_bilinear_np(sample.rgb / 255.0, size, size)
    depth = resize_bilinear_np(sample.depth / DEPTH_MAX, size, size)
    missing = resize_nearest_np(sample.missing, size, size)
    mask = resize_nearest_np(sample.mask, size, size)
    return _stack(rgb, depth, missing, mask)


def augment(sample, rng, resize=400, crop=384, hflip=True):
    """Resize to ``resize``, take one random ``crop`` window for all planes, flip all with p=0.5."""
    rgb = resize_bilinear_np(sample.rgb / 255.0, resize, resize)
    depth = resize_bilinear_np(sample.depth / DEPTH_MAX, resize, resize)
    missing = resize_nearest_np(sample.missing, resize, resize)
    mask = resize_nearest_np(sample.mask, resize, resize)
    top = int(rng.integers(0, resize - crop + 1))
    left = int(rng.integers(0, resize - crop + 1))
    window = (slice(top, top + crop), slice(left, left + crop))
    rgb, depth, missing, mask = (p[window] for p in (rgb, depth, missing, mask))
    flipped = bool(hflip and rng.random() < 0.5)
    if flipped:
        rgb, depth, missing, mask = (p[:, ::-1] for p in (rgb, depth, missing, mask))
    return _stack(rgb, depth, missing, mask, offset=(top, left), flipped=flipped)


def collate(planes):
    """Stack a list of Planes into batch arrays (rgb, depth, missing, mask)."""
    return tuple(np.stack([getattr(p, k) for p in planes]) for k in ("rgb", "depth", "missing", "mask"))


# --------------------------------------------------------------------------
# dataset statistics


def location_distribution(masks, size=256):
    """Pixelwise mean of binary masks resized (nearest) to a common grid."""
    masks = list(masks)
    if not masks:
        raise DataError("location_distribution needs at least one mask")
    acc = np.zeros((size, size))
    for m in masks:
        acc += resize_nearest_np(np.asarray(m, dtype=np.float64), size, size)
    return acc / len(masks)


def color_contrast_chi2(rgb, mask, bins=256, eps=1e-12):
    """Chi-squared distance between glass and non-glass RGB histograms, averaged over channels.

    Each channel histogram is normalized to sum 1, so the distance lies in [0, 1].
    """
    rgb = np.asarray(rgb)
    mask = np.asarray(mask).astype(bool)
    if mask.all() or not mask.any():
        raise DataError("color contrast needs both glass and non-glass pixels")
    total = 0.0
    for ch in range(3):
        values = rgb[..., ch]
        a = np.bincount(values[mask].ravel(), minlength=bins)[:bins].astype(np.float64)
        b = np.bincount(values[~mask].ravel(), minlength=bins)[:bins].astype(np.float64)
        a /= a.sum()
        b /= b.sum()
        total += 0.5 * np.sum((a - b) ** 2 / (a + b + eps))
    return total / 3


def area_ratio(mask):
    """Fraction of the image covered by glass."""
    return float(np.asarray(mask, dtype=np.float64).mean())


def histogram_table(values, bins=10, lo=0.0, hi=1.0, title="value"):
    """Plain-text histogram: one ``[lo, hi) count fraction`` row per bin."""
    values = np.asarray(values, dtype=np.float64)
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    n = max(len(values), 1)
    lines = [f"# {title}  n={len(values)}  mean={values.mean() if len(values) else float('nan'):.4f}"]
    for c, a, b in zip(counts, edges[:-1], edges[1:]):
        lines.append(f"[{a:.2f}, {b:.2f})  {c:6d}  {c / n:.4f}")
    return "\n".join(lines)
