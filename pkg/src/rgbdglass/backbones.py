"""RGB and depth feature extractors, each returning a four-level pyramid.

Both pyramids have strides 4, 8, 16 and 32 relative to the input so that
level ``s`` of the RGB pyramid and level ``s`` of the depth pyramid can be
combined pixel for pixel.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .nn import ConvBR, Module

DEPTH_CHANNELS = (8, 16, 32, 64, 128)


@dataclass
class BackboneConfig:
    rgb_channels: tuple = (16, 32, 64, 128)
    depth_channels: tuple = DEPTH_CHANNELS
    input_size: int = 384

    def __post_init__(self):
        self.rgb_channels = tuple(int(c) for c in self.rgb_channels)
        self.depth_channels = tuple(int(c) for c in self.depth_channels)
        if len(self.rgb_channels) != 4 or min(self.rgb_channels) < 1:
            raise ConfigurationError(f"rgb_channels needs 4 positive widths, got {self.rgb_channels}")
        if len(self.depth_channels) != 5 or min(self.depth_channels) < 1:
            raise ConfigurationError(f"depth_channels needs 5 positive widths, got {self.depth_channels}")
        if self.input_size < 32 or self.input_size % 32:
            raise ConfigurationError(f"input_size must be a positive multiple of 32, got {self.input_size}")

    @property
    def reference_depth_widths(self):
        return self.depth_channels == DEPTH_CHANNELS


@dataclass
class FeaturePyramid:
    stages: list = field(default_factory=list)

    def sizes(self):
        return [s.shape[2] for s in self.stages]

    def channels(self):
        return [s.shape[1] for s in self.stages]

    def __getitem__(self, i):
        return self.stages[i]

    def __len__(self):
        return len(self.stages)


def _check_input(x, channels, cfg):
    if x.ndim != 4 or x.shape[1] != channels:
        raise DimensionError(f"expected [B,{channels},H,W] input, got {x.shape}")
    h, w = x.shape[2:]
    if h % 32 or w % 32:
        raise ConfigurationError(f"input extent {h}x{w} is not divisible by 32")


class RGBBackbone(Module):
    """Small stand-in for the ImageNet backbone with the same stride schedule.

    Level 1: stride-2 conv-BR, 2x2 max pool, conv-BR (stride 4 overall).
    Levels 2-4: stride-2 conv-BR then conv-BR.
    """

    def __init__(self, cfg, rng=None, dtype=np.float64):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.cfg = cfg
        c1, c2, c3, c4 = cfg.rgb_channels
        self.stem = ConvBR(3, c1, 3, stride=2, rng=rng, dtype=dtype)
        self.conv1 = ConvBR(c1, c1, 3, rng=rng, dtype=dtype)
        widths = [c1, c2, c3, c4]
        for s in range(1, 4):
            setattr(self, f"down{s + 1}", ConvBR(widths[s - 1], widths[s], 3, stride=2, rng=rng, dtype=dtype))
            setattr(self, f"conv{s + 1}", ConvBR(widths[s], widths[s], 3, rng=rng, dtype=dtype))

    def forward(self, x):
        _check_input(x, 3, self.cfg)
        f = self.conv1(T.max_pool2x2(self.stem(x)))
        stages = [f]
        for s in range(2, 5):
            f = getattr(self, f"conv{s}")(getattr(self, f"down{s}")(f))
            stages.append(f)
        return FeaturePyramid(stages)


class DepthBackbone(Module):
    """Five (3x3 conv-BR, 2x2 max pool) stages; the last four form the pyramid."""

    def __init__(self, cfg, rng=None, dtype=np.float64):
        super().__init__()
        rng = np.random.default_rng(1) if rng is None else rng
        self.cfg = cfg
        c_prev = 1
        for s, c in enumerate(cfg.depth_channels, start=1):
            setattr(self, f"stage{s}", ConvBR(c_prev, c, 3, stride=1, padding=1, rng=rng, dtype=dtype))
            c_prev = c

    def stage_outputs(self, d):
        """All five pooled stage outputs, finest first."""
        _check_input(d, 1, self.cfg)
        outs = []
        f = d
        for s in range(1, 6):
            f = T.max_pool2x2(getattr(self, f"stage{s}")(f))
            outs.append(f)
        return outs

    def forward(self, d):
        return FeaturePyramid(self.stage_outputs(d)[1:])


def rgb_backbone(x, net):
    return net(x)


def depth_backbone(d, net):
    return net(d)
