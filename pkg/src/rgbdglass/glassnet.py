"""Network assembly: backbones, per-level CCM/DAA, decoders and the hybrid loss.

Levels are processed coarse to fine (4, 3, 2, 1). The enhanced features of
level ``s`` are projected to the RGB width of level ``s-1``, upsampled by 2
and added to that level's RGB backbone features before its CCM. Every level
has a decoder whose 1-channel logits are upsampled to the input size, and
all four are supervised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backbones import BackboneConfig, DepthBackbone, FeaturePyramid, RGBBackbone
from .ccm import CCM
from .daa import DAA, MAX_ATTENTION_LENGTH
from .errors import ConfigurationError, DataError, DimensionError
from .nn import Conv2d, ConvBR, Module

IOU_SMOOTH = 1.0
STAGES = (4, 3, 2, 1)


@dataclass
class NetworkConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    c_ctx: tuple = None
    daa_stages: tuple = (4, 3)
    n_stages: int = 4
    loss_weights: tuple = (1.0, 1.0, 1.0, 1.0)
    use_depth: bool = True
    trainable_gamma: bool = True
    max_attention_length: int = MAX_ATTENTION_LENGTH
    dtype: str = "float64"

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        if self.c_ctx is None:
            self.c_ctx = self.backbone.rgb_channels
        self.c_ctx = tuple(int(c) for c in self.c_ctx)
        self.daa_stages = tuple(sorted({int(s) for s in self.daa_stages}, reverse=True))
        self.loss_weights = tuple(float(w) for w in self.loss_weights)
        if self.n_stages != 4:
            raise ConfigurationError("only the 4-stage network is supported")
        if len(self.c_ctx) != 4 or min(self.c_ctx) < 1:
            raise ConfigurationError(f"c_ctx needs 4 positive widths, got {self.c_ctx}")
        if not set(self.daa_stages) <= {1, 2, 3, 4}:
            raise ConfigurationError(f"daa_stages must be a subset of 1..4, got {self.daa_stages}")
        if len(self.loss_weights) != 4:
            raise ConfigurationError("loss_weights needs one weight per stage")
        if not self.use_depth and self.daa_stages:
            raise ConfigurationError("DAA needs the depth branch (use_depth=False requires daa_stages=())")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self):
        return {
            "backbone": {
                "rgb_channels": list(self.backbone.rgb_channels),
                "depth_channels": list(self.backbone.depth_channels),
                "input_size": self.backbone.input_size,
            },
            "c_ctx": list(self.c_ctx),
            "daa_stages": list(self.daa_stages),
            "n_stages": self.n_stages,
            "loss_weights": list(self.loss_weights),
            "use_depth": self.use_depth,
            "trainable_gamma": self.trainable_gamma,
            "max_attention_length": self.max_attention_length,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["backbone"] = BackboneConfig(**d["backbone"])
        return cls(**d)


@dataclass
class StagePrediction:
    stage: int
    logits_full: T.Tensor
    features_out: T.Tensor
    logits_native: T.Tensor = None


class Decoder(Module):
    """3x3 conv-BR then 1x1 conv to a single logit channel."""

    def __init__(self, channels, rng, dtype=np.float64):
        super().__init__()
        self.body = ConvBR(channels, channels, 3, rng=rng, dtype=dtype)
        self.head = Conv2d(channels, 1, 1, rng=rng, dtype=dtype)

    def forward(self, x):
        return self.head(self.body(x))


class GlassNet(Module):
    def __init__(self, cfg=None, seed=0):
        super().__init__()
        cfg = NetworkConfig() if cfg is None else cfg
        self.cfg = cfg
        dt = cfg.np_dtype
        rng = np.random.default_rng(seed)
        bb = cfg.backbone
        self.rgb_backbone = RGBBackbone(bb, rng, dt)
        if cfg.use_depth:
            self.depth_backbone = DepthBackbone(bb, rng, dt)
        depth_widths = bb.depth_channels[1:]
        for s in STAGES:
            i = s - 1
            c_rgb, c_ctx = bb.rgb_channels[i], cfg.c_ctx[i]
            setattr(self, f"ccm{s}", CCM(c_rgb, depth_widths[i], c_ctx, rng, cfg.use_depth, dt))
            if s in cfg.daa_stages:
                setattr(self, f"daa{s}", DAA(c_ctx, rng, cfg.trainable_gamma, cfg.max_attention_length, dt))
            setattr(self, f"decoder{s}", Decoder(c_ctx, rng, dt))
            if s < 4:
                setattr(self, f"lateral{s}", ConvBR(cfg.c_ctx[i + 1], c_rgb, 1, rng=rng, dtype=dt))

    def daa_modules(self):
        return [getattr(self, f"daa{s}") for s in self.cfg.daa_stages]

    def forward(self, rgb, depth=None, dm=None):
        """Return four StagePrediction objects ordered stage 4 -> stage 1."""
        rgb = _as_input(rgb, self.cfg.np_dtype)
        if rgb.ndim != 4 or rgb.shape[1] != 3:
            raise DimensionError(f"rgb must be [B,3,H,W], got {rgb.shape}")
        h, w = rgb.shape[2:]
        rgb_pyr = self.rgb_backbone(rgb)
        depth_pyr = None
        if self.cfg.use_depth:
            if depth is None:
                raise DimensionError("this network needs a depth input")
            depth = _as_input(depth, self.cfg.np_dtype)
            if depth.shape != (rgb.shape[0], 1, h, w):
                raise DimensionError(f"depth {depth.shape} does not align with rgb {rgb.shape}")
            if self.cfg.daa_stages:
                if dm is None:
                    raise DimensionError("DAA stages need a depth-missing map")
                dm_arr = np.asarray(dm.data if isinstance(dm, T.Tensor) else dm)
                if dm_arr.shape != (rgb.shape[0], 1, h, w):
                    raise DimensionError(f"depth-missing map {dm_arr.shape} does not align with rgb {rgb.shape}")
                if not np.isin(dm_arr, (0, 1)).all():
                    raise DataError("depth-missing map must be binary")
                dm = dm_arr
            depth_pyr = self.depth_backbone(depth)

        preds = []
        prev = None
        for s in STAGES:
            x = rgb_pyr[s - 1]
            if prev is not None:
                lat = getattr(self, f"lateral{s}")(prev)
                x = x + T.resize_bilinear(lat, x.shape[2], x.shape[3])
            xd = depth_pyr[s - 1] if depth_pyr is not None else None
            out = getattr(self, f"ccm{s}")(x, xd)
            feat = out.crc
            if s in self.cfg.daa_stages:
                feat = getattr(self, f"daa{s}")(out.crc, out.y_rgb, out.y_depth, dm)
            native = getattr(self, f"decoder{s}")(feat)
            preds.append(StagePrediction(s, T.resize_bilinear(native, h, w), feat, native))
            prev = feat
        return preds

    def predict_proba(self, rgb, depth=None, dm=None):
        """Sigmoid of the stage-1 logits as a numpy array [B,H,W]; no post-processing."""
        preds = self.forward(rgb, depth, dm)
        return T.sigmoid(preds[-1].logits_full.detach()).data[:, 0]


def _as_input(x, dtype):
    if isinstance(x, T.Tensor):
        return x if x.dtype == dtype else T.Tensor(x.data.astype(dtype))
    return T.Tensor(np.asarray(x, dtype=dtype))


def soft_iou_loss(logits, gt, smooth=IOU_SMOOTH):
    """1 - (sum p*g + s) / (sum p + sum g - sum p*g + s) per image, averaged over the batch."""
    p = T.sigmoid(logits)
    g = T.Tensor(gt)
    inter = (p * g).sum(axis=(1, 2, 3))
    union = p.sum(axis=(1, 2, 3)) + g.sum(axis=(1, 2, 3)) - inter
    return (1.0 - (inter + smooth) / (union + smooth)).mean()


def stage_loss(logits, gt):
    """Binary cross-entropy plus soft-IoU for one stage's full-resolution logits."""
    return T.bce_with_logits(logits, gt) + soft_iou_loss(logits, gt)


def hybrid_loss(preds, gt, weights=None):
    """Weighted sum over stages of (BCE + soft IoU); returns (total, per-stage losses)."""
    gt = np.asarray(gt.data if isinstance(gt, T.Tensor) else gt)
    if not np.isin(gt, (0, 1)).all():
        raise DataError("ground truth must be binary")
    weights = (1.0,) * len(preds) if weights is None else tuple(weights)
    if len(weights) != len(preds):
        raise ConfigurationError(f"{len(weights)} loss weights for {len(preds)} stages")
    gt = gt.astype(preds[0].logits_full.dtype)
    per_stage = [stage_loss(p.logits_full, gt) for p in preds]
    total = None
    for wgt, loss in zip(weights, per_stage):
        if wgt == 0:
            continue
        term = loss if wgt == 1 else loss * wgt
        total = term if total is None else total + term
    if total is None:
        total = per_stage[0] * 0.0
    return total, per_stage
