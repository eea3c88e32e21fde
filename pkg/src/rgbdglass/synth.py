"""Synthetic RGB-D glass scenes.

A scene is a smooth colour gradient with texture; a few axis-aligned
rectangles play the glass panels. Their colour is a blurred, tinted copy of
what lies behind them (or an exact copy, for probes where appearance must
carry no signal). Depth is a tilted plane; missing-depth holes are dense and
blob-shaped inside glass and sparse outside.
"""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import ndtr

from .dataio import Sample, normalize_depth
from .errors import ConfigurationError


@dataclass
class SynthConfig:
    size: int = 96
    n_rects: tuple = (1, 2)
    p_missing_in_glass: float = 0.5
    p_missing_outside: float = 0.02
    noise: float = 6.0
    blob_sigma: float = 1.5
    glass_appearance: str = "attenuated"  # or "identical"
    seed: int = 0

    def __post_init__(self):
        self.n_rects = tuple(int(n) for n in self.n_rects)
        if self.size < 8:
            raise ConfigurationError(f"scene size {self.size} is too small")
        lo, hi = self.n_rects
        if not 1 <= lo <= hi:
            raise ConfigurationError(f"n_rects range must satisfy 1 <= lo <= hi, got {self.n_rects}")
        if not 0 <= self.p_missing_outside < self.p_missing_in_glass <= 1:
            raise ConfigurationError(
                "need 0 <= p_missing_outside < p_missing_in_glass <= 1, got "
                f"{self.p_missing_outside}, {self.p_missing_in_glass}"
            )
        if self.glass_appearance not in ("attenuated", "identical"):
            raise ConfigurationError(f"unknown glass_appearance {self.glass_appearance!r}")


def _background(rng, s, noise):
    yy, xx = np.mgrid[0:s, 0:s] / (s - 1)
    base = rng.uniform(40, 200, size=3)
    gx, gy = rng.uniform(-60, 60, size=(2, 3))
    img = base + xx[..., None] * gx + yy[..., None] * gy
    blotches = gaussian_filter(rng.standard_normal((s, s, 3)), sigma=(s / 12, s / 12, 0))
    blotches /= blotches.std() + 1e-12
    img += 18 * blotches + noise * rng.standard_normal((s, s, 3))
    return img


def _rectangles(rng, s, n_rects):
    mask = np.zeros((s, s), dtype=np.uint8)
    for _ in range(int(rng.integers(n_rects[0], n_rects[1] + 1))):
        h = int(rng.integers(s // 5, s // 2 + 1))
        w = int(rng.integers(s // 5, s // 2 + 1))
        top = int(rng.integers(0, s - h + 1))
        left = int(rng.integers(0, s - w + 1))
        mask[top:top + h, left:left + w] = 1
    return mask


def _blob_uniform(rng, s, sigma):
    """Spatially correlated field with uniform(0,1) marginals."""
    field = gaussian_filter(rng.standard_normal((s, s)), sigma=sigma)
    field = (field - field.mean()) / (field.std() + 1e-12)
    return ndtr(field)


def synth_scene(cfg, rng, sample_id="synth"):
    """Draw one Sample from ``rng`` according to ``cfg``."""
    s = cfg.size
    bg = _background(rng, s, cfg.noise)
    mask = _rectangles(rng, s, cfg.n_rects)
    glass = mask.astype(bool)

    rgb = bg.copy()
    if cfg.glass_appearance == "attenuated":
        behind = gaussian_filter(bg, sigma=(1.5, 1.5, 0))
        tint = np.array([150.0, 185.0, 200.0])
        rgb[glass] = 0.7 * behind[glass] + 0.3 * tint
    rgb = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)

    yy, xx = np.mgrid[0:s, 0:s] / (s - 1)
    d0 = rng.uniform(1.0, 3.0)
    ax, ay = rng.uniform(-0.8, 0.8, size=2)
    raw = d0 + ax * xx + ay * yy + 0.01 * rng.standard_normal((s, s))

    holes_in = _blob_uniform(rng, s, cfg.blob_sigma) < cfg.p_missing_in_glass
    holes_out = rng.random((s, s)) < cfg.p_missing_outside
    valid = ~np.where(glass, holes_in, holes_out)
    depth = normalize_depth(raw, valid)
    return Sample(sample_id, rgb, depth, mask)


def sample_rng(seed, index):
    """Independent per-sample stream derived from a master seed."""
    return np.random.default_rng([int(seed), int(index)])


def generate(cfg, count, seed=None, prefix="synth"):
    """``count`` scenes with ids ``<prefix>_00000``...; scene i depends only on (seed, i)."""
    seed = cfg.seed if seed is None else seed
    return [synth_scene(cfg, sample_rng(seed, i), f"{prefix}_{i:05d}") for i in range(count)]
