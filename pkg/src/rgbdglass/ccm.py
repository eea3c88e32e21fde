"""Cross-modal context mining.

Per modality, features are projected to ``c_ctx`` channels and expanded into
four atrous context maps (dilation 1, 2, 4, 8). The six pairwise sums of those
maps are concatenated, re-weighted by channel and context attention and
reduced back to ``c_ctx`` channels. Four such streams (RGB, depth, implicit
fusion of the raw inputs, explicit fusion of the pairwise sums) are merged by
an adaptive selection step into a single cross-modal context map.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import AttentionHead, Conv2d, ContextAttention, ConvBR, Module, channel_attention

RATES = (1, 2, 4, 8)
PAIRS = tuple(combinations(RATES, 2))  # (1,2) (1,4) (1,8) (2,4) (2,8) (4,8)
N_PAIRS = len(PAIRS)


def pair_key(pair):
    return f"p{pair[0]}_{pair[1]}"


@dataclass
class CcmOutput:
    crc: T.Tensor
    y_rgb: T.Tensor
    y_depth: T.Tensor
    y_imp: T.Tensor
    y_exp: T.Tensor
    pairs_rgb: dict
    pairs_depth: dict


class ContextPyramid(Module):
    """1x1 projection followed by four parallel 3x3 atrous conv-BR branches."""

    def __init__(self, c_in, c_ctx, rng, dtype=np.float64):
        super().__init__()
        self.proj = ConvBR(c_in, c_ctx, 1, rng=rng, dtype=dtype)
        for r in RATES:
            setattr(self, f"r{r}", ConvBR(c_ctx, c_ctx, 3, dilation=r, padding=r, rng=rng, dtype=dtype))

    def forward(self, x):
        p = self.proj(x)
        return {r: getattr(self, f"r{r}")(p) for r in RATES}


def context_pyramid(x, pyramid):
    return pyramid(x)


def rich_pairs(cs):
    """Pairwise sums of the context maps, keyed (r_i, r_j) with r_i < r_j in fixed order."""
    if sorted(cs) != list(RATES):
        raise DimensionError(f"context set must hold rates {RATES}, got {sorted(cs)}")
    return {(ri, rj): cs[ri] + cs[rj] for ri, rj in PAIRS}


class SingleModalMining(Module):
    """Context mining on one input: pyramid, pair fusion, attention, reduction."""

    def __init__(self, c_in, c_ctx, rng, dtype=np.float64):
        super().__init__()
        self.pyramid = ContextPyramid(c_in, c_ctx, rng, dtype)
        self.attention = ContextAttention(N_PAIRS * c_ctx, N_PAIRS, rng=rng, dtype=dtype)
        self.reduce = ConvBR(N_PAIRS * c_ctx, c_ctx, 1, rng=rng, dtype=dtype)

    def aggregate(self, x):
        pairs = rich_pairs(self.pyramid(x))
        return T.concat(list(pairs.values()), axis=1), pairs

    def forward(self, x):
        arc, pairs = self.aggregate(x)
        return self.reduce(self.attention(arc)), pairs


class ImplicitMining(Module):
    """Concatenate RGB and depth features, fuse by 1x1 conv-BR, then mine as one modality."""

    def __init__(self, c_rgb, c_depth, c_ctx, rng, dtype=np.float64):
        super().__init__()
        self.fuse = ConvBR(c_rgb + c_depth, c_ctx, 1, rng=rng, dtype=dtype)
        self.mining = SingleModalMining(c_ctx, c_ctx, rng, dtype)

    def forward(self, x_rgb, x_depth):
        if x_rgb.shape[0] != x_depth.shape[0] or x_rgb.shape[2:] != x_depth.shape[2:]:
            raise DimensionError(f"implicit mining needs aligned inputs, got {x_rgb.shape} and {x_depth.shape}")
        x_mul = self.fuse(T.concat([x_rgb, x_depth], axis=1))
        y, _ = self.mining(x_mul)
        return y


class ExplicitMining(Module):
    """Sum same-scale RGB/depth pairs, then a 3x3 conv-BR dilated by the pair's larger rate."""

    def __init__(self, c_ctx, rng, dtype=np.float64):
        super().__init__()
        for ri, rj in PAIRS:
            setattr(self, pair_key((ri, rj)), ConvBR(c_ctx, c_ctx, 3, dilation=rj, padding=rj, rng=rng, dtype=dtype))
        self.attention = ContextAttention(N_PAIRS * c_ctx, N_PAIRS, rng=rng, dtype=dtype)
        self.reduce = ConvBR(N_PAIRS * c_ctx, c_ctx, 1, rng=rng, dtype=dtype)

    def branch(self, pair):
        return getattr(self, pair_key(pair))

    def forward(self, pairs_rgb, pairs_depth):
        fused = []
        for pair in PAIRS:
            a, b = pairs_rgb[pair], pairs_depth[pair]
            if a.shape != b.shape:
                raise DimensionError(f"pair {pair}: {a.shape} vs {b.shape}")
            fused.append(self.branch(pair)(a + b))
        arc = T.concat(fused, axis=1)
        return self.reduce(self.attention(arc))


class AdaptiveSelection(Module):
    """1x1 conv from n_streams*c_ctx to c_ctx channels, then channel attention."""

    def __init__(self, n_streams, c_ctx, rng, dtype=np.float64):
        super().__init__()
        self.n_streams = n_streams
        self.reduce = Conv2d(n_streams * c_ctx, c_ctx, 1, rng=rng, dtype=dtype)
        self.cna = AttentionHead(c_ctx, c_ctx, rng=rng, dtype=dtype)

    def forward(self, *streams):
        x = self.reduce(T.concat(list(streams), axis=1))
        return channel_attention(x, self.cna)


class CCM(Module):
    """Cross-modal context mining for one pyramid level.

    With ``use_depth=False`` only the RGB stream is built and the selection
    step sees a single input (the RGB-only ablation).
    """

    def __init__(self, c_rgb, c_depth, c_ctx, rng=None, use_depth=True, dtype=np.float64):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.c_ctx = c_ctx
        self.use_depth = use_depth
        self.rgb = SingleModalMining(c_rgb, c_ctx, rng, dtype)
        if use_depth:
            self.depth = SingleModalMining(c_depth, c_ctx, rng, dtype)
            self.imp = ImplicitMining(c_rgb, c_depth, c_ctx, rng, dtype)
            self.exp = ExplicitMining(c_ctx, rng, dtype)
        self.select = AdaptiveSelection(4 if use_depth else 1, c_ctx, rng, dtype)

    def forward(self, x_rgb, x_depth=None):
        y_rgb, pairs_rgb = self.rgb(x_rgb)
        if not self.use_depth:
            crc = self.select(y_rgb)
            return CcmOutput(crc, y_rgb, None, None, None, pairs_rgb, None)
        if x_depth is None:
            raise DimensionError("CCM built with a depth stream needs depth features")
        y_depth, pairs_depth = self.depth(x_depth)
        y_imp = self.imp(x_rgb, x_depth)
        y_exp = self.exp(pairs_rgb, pairs_depth)
        crc = self.select(y_rgb, y_depth, y_imp, y_exp)
        return CcmOutput(crc, y_rgb, y_depth, y_imp, y_exp, pairs_rgb, pairs_depth)


def ccm_forward(x_rgb, x_depth, module):
    return module(x_rgb, x_depth)
