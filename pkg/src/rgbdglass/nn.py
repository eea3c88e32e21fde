"""Parameter containers and the reusable network blocks.

``Module`` keeps three ordered registries (parameters, buffers, children)
filled through attribute assignment, which gives every parameter a stable
dotted name such as ``ccm.stage4.rgb.pyramid.r2.conv.weight``. Those names are
the checkpoint keys.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
ATTENTION_REDUCTION = 4


class Parameter(Tensor):
    """A leaf tensor owned by a module. ``requires_grad`` defaults to True."""

    __slots__ = ()

    def __init__(self, data, requires_grad=True, dtype=None):
        super().__init__(np.array(data, dtype=dtype), requires_grad=requires_grad)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{name}.")

    def named_modules(self, prefix=""):
        yield prefix.rstrip("."), self
        for name, child in self._children.items():
            yield from child.named_modules(f"{prefix}{name}.")

    def state_dict(self):
        """Flat name -> numpy array map of parameters and buffers (copies)."""
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state, strict=True):
        """Copy arrays into parameters/buffers in place.

        Returns ``(missing, unexpected)`` name lists; with ``strict`` a
        mismatch raises ``KeyError`` listing both.
        """
        targets = {name: p.data for name, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        missing = [n for n in targets if n not in state]
        unexpected = [n for n in state if n not in targets]
        if strict and (missing or unexpected):
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, dst in targets.items():
            if name not in state:
                continue
            src = np.asarray(state[name])
            if src.shape != dst.shape:
                raise DimensionError(f"{name}: checkpoint shape {src.shape} != model shape {dst.shape}")
            dst[...] = src
        return missing, unexpected

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def train(self, mode=True):
        for _, m in self.named_modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_uniform(rng, shape, dtype=np.float64):
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    """Plain convolution (weights [O,C,k,k], bias [O])."""

    def __init__(self, c_in, c_out, k=1, stride=1, padding=0, dilation=1, rng=None, dtype=np.float64):
        super().__init__()
        if k % 2 == 0:
            raise ConfigurationError(f"kernel size must be odd, got {k}")
        rng = np.random.default_rng(0) if rng is None else rng
        self.stride, self.padding, self.dilation = stride, padding, dilation
        self.weight = Parameter(he_uniform(rng, (c_out, c_in, k, k), dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1]

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation)


class ConvBR(Module):
    """Convolution -> BatchNorm -> ReLU."""

    def __init__(self, c_in, c_out, k=3, stride=1, padding=None, dilation=1, rng=None, dtype=np.float64):
        super().__init__()
        if padding is None:
            padding = dilation * (k // 2)
        self.conv = Conv2d(c_in, c_out, k, stride, padding, dilation, rng=rng, dtype=dtype)
        self.bn_gamma = Parameter(np.ones(c_out, dtype=dtype))
        self.bn_beta = Parameter(np.zeros(c_out, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(c_out, dtype=dtype))
        self.register_buffer("running_var", np.ones(c_out, dtype=dtype))
        self.eps = BN_EPS
        self.momentum = BN_MOMENTUM

    @property
    def out_channels(self):
        return self.conv.out_channels

    def forward(self, x):
        y = self.conv(x)
        y = T.batch_norm(
            y, self.bn_gamma, self.bn_beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )
        return T.relu(y)


def conv_br(x, block):
    return block(x)


class AttentionHead(Module):
    """GAP -> 1x1 conv -> ReLU -> 1x1 conv -> sigmoid, giving [B, n_out, 1, 1] weights."""

    def __init__(self, c_in, n_out, reduction=ATTENTION_REDUCTION, rng=None, dtype=np.float64):
        super().__init__()
        hidden = max(1, c_in // reduction)
        self.psi1 = Conv2d(c_in, hidden, 1, rng=rng, dtype=dtype)
        self.psi2 = Conv2d(hidden, n_out, 1, rng=rng, dtype=dtype)

    @property
    def n_out(self):
        return self.psi2.out_channels

    def forward(self, x):
        s = T.global_avg_pool(x)
        return T.sigmoid(self.psi2(T.relu(self.psi1(s))))


def channel_attention(x, head):
    """Scale each channel of x by its own learned weight in (0, 1)."""
    c = x.shape[1]
    if head.n_out != c:
        raise DimensionError(f"channel attention head emits {head.n_out} weights for {c} channels")
    return x * head(x)


def context_attention(x, head, n_contexts):
    """Scale each of ``n_contexts`` channel groups of x by one shared weight."""
    b, c, h, w = x.shape
    if n_contexts < 1 or c % n_contexts:
        raise ConfigurationError(f"{c} channels cannot be split into {n_contexts} contexts")
    if head.n_out != n_contexts:
        raise DimensionError(f"context head emits {head.n_out} weights for {n_contexts} contexts")
    wts = head(x).reshape(b, n_contexts, 1, 1, 1)
    grouped = x.reshape(b, n_contexts, c // n_contexts, h, w)
    return (grouped * wts).reshape(b, c, h, w)


class ContextAttention(Module):
    """Channel-wise (CNA) and context-wise (CXA) weights applied jointly to one input."""

    def __init__(self, channels, n_contexts, rng=None, dtype=np.float64):
        super().__init__()
        if channels % n_contexts:
            raise ConfigurationError(f"{channels} channels cannot be split into {n_contexts} contexts")
        self.n_contexts = n_contexts
        self.cna = AttentionHead(channels, channels, rng=rng, dtype=dtype)
        self.cxa = AttentionHead(channels, n_contexts, rng=rng, dtype=dtype)

    def forward(self, x):
        b, c, h, w = x.shape
        w_cna = self.cna(x)
        w_cxa = self.cxa(x).reshape(b, self.n_contexts, 1, 1, 1)
        scaled = (x * w_cna).reshape(b, self.n_contexts, c // self.n_contexts, h, w)
        return (scaled * w_cxa).reshape(b, c, h, w)
