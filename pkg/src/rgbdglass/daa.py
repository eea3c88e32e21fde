"""Depth-missing aware attention.

Spatial self-attention over the H*W positions of a feature map. The binary
depth-missing map is added (broadcast over channels) to the value features,
so it changes what is aggregated but never the attention weights. The
attended result is scaled by a learnable scalar ``gamma`` (initially 0) and
added back to the input.
"""

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .nn import Conv2d, ConvBR, Module, Parameter

MAX_ATTENTION_LENGTH = 24 * 24
MODALITIES = ("cm", "rgb", "depth")


class DAAStream(Module):
    """Query/key/value projections and gain for one modality."""

    def __init__(self, channels, rng=None, trainable_gamma=True, dtype=np.float64):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        c_qk = max(1, channels // 8)
        self.phi_q = Conv2d(channels, c_qk, 1, rng=rng, dtype=dtype)
        self.phi_k = Conv2d(channels, c_qk, 1, rng=rng, dtype=dtype)
        self.phi_v = Conv2d(channels, channels, 1, rng=rng, dtype=dtype)
        self.gamma = Parameter(np.zeros(1, dtype=dtype), requires_grad=trainable_gamma)

    def forward(self, x, dm, max_len=MAX_ATTENTION_LENGTH):
        return daa_attend(x, dm, self, max_len)


def daa_attend(x, dm, stream, max_len=MAX_ATTENTION_LENGTH, return_attention=False):
    """gamma * softmax(q k^T) (v + dm) + x for x [B,C,H,W] and dm [B,1,H,W].

    ``dm`` must already have the spatial size of ``x``. Raises
    ConfigurationError when H*W exceeds ``max_len``.
    """
    b, c, h, w = x.shape
    length = h * w
    if length > max_len:
        raise ConfigurationError(f"attention length {length} ({h}x{w}) exceeds cap {max_len}")
    dm = dm if isinstance(dm, T.Tensor) else T.Tensor(np.asarray(dm, dtype=x.dtype))
    if dm.shape != (b, 1, h, w):
        raise DimensionError(f"depth-missing map {dm.shape} does not match features {x.shape}")
    q = stream.phi_q(x)
    k = stream.phi_k(x)
    c_qk = q.shape[1]
    q = q.reshape(b, c_qk, length).transpose(0, 2, 1)
    k = k.reshape(b, c_qk, length)
    attn = T.softmax(q @ k)  # [B, L, L], rows sum to 1
    v = (stream.phi_v(x) + dm).reshape(b, c, length)
    out = (v @ attn.transpose(0, 2, 1)).reshape(b, c, h, w)
    y = stream.gamma.reshape(1, 1, 1, 1) * out + x
    if return_attention:
        return y, attn
    return y


class DAA(Module):
    """Per-modality attention on (CRC, y_rgb, y_depth), concatenated and fused by 1x1 conv-BR."""

    def __init__(self, channels, rng=None, trainable_gamma=True, max_len=MAX_ATTENTION_LENGTH, dtype=np.float64):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.max_len = max_len
        for name in MODALITIES:
            setattr(self, name, DAAStream(channels, rng, trainable_gamma, dtype))
        self.fuse = ConvBR(3 * channels, channels, 1, rng=rng, dtype=dtype)

    def streams(self):
        return [getattr(self, name) for name in MODALITIES]

    def forward(self, crc, y_rgb, y_depth, dm):
        feats = (crc, y_rgb, y_depth)
        for f in feats[1:]:
            if f.shape != crc.shape:
                raise DimensionError(f"DAA inputs must align: {crc.shape} vs {f.shape}")
        h, w = crc.shape[2:]
        dm_small = resize_missing_map(dm, h, w, crc.dtype)
        outs = [daa_attend(f, dm_small, s, self.max_len) for f, s in zip(feats, self.streams())]
        return self.fuse(T.concat(outs, axis=1))


def resize_missing_map(dm, h, w, dtype=np.float64):
    """Nearest-neighbour resize of a [B,1,H,W] binary map; stays binary."""
    arr = dm.data if isinstance(dm, T.Tensor) else np.asarray(dm)
    if arr.ndim != 4 or arr.shape[1] != 1:
        raise DimensionError(f"depth-missing map must be [B,1,H,W], got {arr.shape}")
    return T.Tensor(T.resize_nearest(arr, h, w).astype(dtype))


def daa_forward(crc, y_rgb, y_depth, dm, module):
    return module(crc, y_rgb, y_depth, dm)
