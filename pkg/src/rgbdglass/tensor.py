"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record their parents and a closure mapping the output gradient to
the parents' gradients; :meth:`Tensor.backward` walks that graph in reverse
topological order. Only leaves (tensors created directly, e.g. parameters)
keep a ``.grad`` buffer; intermediate gradients are freed as the walk
proceeds.

The operator set is deliberately small: what the glass-detection network
needs, plus the arithmetic needed to compose losses.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import ConfigurationError, DimensionError, UsageError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    # -- basic properties ---------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def is_finite(self):
        """True when no stored value is NaN or infinite."""
        return bool(np.isfinite(self.data).all())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return len(self.data)

    # -- autograd -----------------------------------------------------------

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every ``requires_grad`` leaf.

        ``self`` must be a scalar (size 1). Calling twice accumulates.
        """
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("backward() on a tensor that does not require grad")
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.dtype)

        order = _topological_order(self)
        grads = {id(self): seed}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _result(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# --------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    sa, sb = a.shape, b.shape

    def backward(g):
        return unbroadcast(g, sa), unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), backward)


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    ad, bd = a.data, b.data

    def backward(g):
        ga = unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(ad * bd, (a, b), backward)


def div(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward)


def exp(a):
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a):
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,))


# --------------------------------------------------------------------------
# reductions and shape manipulation


def tsum(a, axis=None, keepdims=False):
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a, axis=None, keepdims=False):
    shape = a.shape
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([shape[i] for i in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _result(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)


def reshape(a, shape):
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a, axes):
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors, axis=1):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(
            n != m for i, (n, m) in enumerate(zip(ref, other)) if i != axis % len(ref)
        ):
            raise DimensionError(f"concat: shapes {tensors[0].shape} and {t.shape} disagree off axis {axis}")
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def matmul(a, b):
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if b.requires_grad:
            gb = unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _result(np.matmul(ad, bd), (a, b), backward)


# --------------------------------------------------------------------------
# activations


def relu(x):
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x):
    out = _sigmoid_np(x.data)
    return _result(out, (x,), lambda g: (g * out * (1 - out),))


def softmax(x):
    """Softmax over the last axis."""
    if x.shape[-1] < 1:
        raise DimensionError("softmax over an empty axis")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), backward)


def activation(x, kind):
    """Dispatch by name: ``relu``, ``sigmoid`` or ``softmax_last_axis``."""
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind in ("softmax", "softmax_last_axis"):
        return softmax(x)
    raise ConfigurationError(f"unknown activation {kind!r}")


def _sigmoid_np(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# --------------------------------------------------------------------------
# convolution and pooling


def conv_output_size(size, k, stride, padding, dilation):
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1):
    """2-D cross-correlation of x [B,C,H,W] with weight [O,C,k,k]."""
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects a rank-4 input, got shape {x.shape}")
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise DimensionError(f"conv2d expects square [O,C,k,k] weights, got {weight.shape}")
    b, c, h, w = x.shape
    o, ci, k, _ = weight.shape
    if ci != c:
        raise DimensionError(f"conv2d: input has {c} channels, weights expect {ci}")
    if bias is not None and bias.shape != (o,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({o},)")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ConfigurationError("conv2d: stride/dilation must be >= 1 and padding >= 0")
    ho = conv_output_size(h, k, stride, padding, dilation)
    wo = conv_output_size(w, k, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise ConfigurationError(
            f"conv2d: non-positive output extent {ho}x{wo} for input {h}x{w}, "
            f"k={k}, stride={stride}, padding={padding}, dilation={dilation}"
        )

    wd = weight.data
    w2 = wd.reshape(o, ci * k * k)
    pointwise = k == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = x.data.reshape(b, c, h * w)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
        cols = _kernels.im2col(xp, k, stride, dilation, ho, wo).reshape(b, ci * k * k, ho * wo)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(b, o, ho, wo)

    def backward(g):
        g2 = g.reshape(b, o, ho * wo)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(wd.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2)
            if pointwise:
                gx = gcols.reshape(b, c, h, w)
            else:
                hp, wp = h + 2 * padding, w + 2 * padding
                gxp = _kernels.col2im(gcols.reshape(b, ci, k, k, ho, wo), hp, wp, stride, dilation)
                gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward)


def max_pool2x2(x):
    """2x2 max pool with stride 2. Gradient goes to the first maximum of each window."""
    if x.ndim != 4:
        raise DimensionError(f"max_pool2x2 expects rank-4 input, got {x.shape}")
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise DimensionError(f"max_pool2x2 needs even spatial extents, got {h}x{w}")
    out, idx = _kernels.maxpool2_forward(x.data)
    return _result(out, (x,), lambda g: (_kernels.maxpool2_backward(g, idx),))


def global_avg_pool(x):
    """Mean over H and W, keeping a [B,C,1,1] shape."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects rank-4 input, got {x.shape}")
    return tmean(x, axis=(2, 3), keepdims=True)


def pool2d(x, mode):
    if mode == "max2x2s2":
        return max_pool2x2(x)
    if mode == "global_avg":
        return global_avg_pool(x)
    raise ConfigurationError(f"unknown pool mode {mode!r}")


# --------------------------------------------------------------------------
# resizing


def interp_matrix(n_out, n_in, dtype=np.float64):
    """Row-stochastic [n_out, n_in] linear interpolation matrix, corners aligned."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1
        return m
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(np.floor(pos).astype(np.intp), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    m[rows, lo] += 1 - frac
    m[rows, lo + 1] += frac
    return m


def resize_bilinear(x, h, w):
    """Bilinear resize of the last two axes with aligned corners."""
    if h < 1 or w < 1:
        raise ConfigurationError(f"resize target must be positive, got {h}x{w}")
    hi, wi = x.shape[-2:]
    if (hi, wi) == (h, w):
        return _result(x.data.copy(), (x,), lambda g: (g,))
    rh = interp_matrix(h, hi, x.dtype)
    rw = interp_matrix(w, wi, x.dtype)
    out = np.matmul(np.matmul(rh, x.data), rw.T)

    def backward(g):
        return (np.matmul(np.matmul(rh.T, g), rw),)

    return _result(out, (x,), backward)


def nearest_indices(n_out, n_in):
    """Source index sampled for each output position (pixel-centre rule)."""
    return np.minimum(((np.arange(n_out) + 0.5) * n_in / n_out).astype(np.intp), n_in - 1)


def resize_nearest(x, h, w):
    """Nearest-neighbour resize; preserves the value set (used for binary maps)."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    hi, wi = arr.shape[-2:]
    out = arr[..., nearest_indices(h, hi), :][..., nearest_indices(w, wi)]
    return Tensor(out) if isinstance(x, Tensor) else out


# --------------------------------------------------------------------------
# normalization and losses


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel batch normalization of x [B,C,H,W].

    In training mode normalizes with batch statistics and updates the
    ``running_mean``/``running_var`` numpy arrays in place; in eval mode uses
    them unchanged.
    """
    xd = x.data
    c = xd.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: {c} channels but gamma/beta shapes {gamma.shape}/{beta.shape}")
    gd = gamma.data.reshape(1, c, 1, 1)
    if training:
        n = xd.size // c
        mean = xd.mean(axis=(0, 2, 3))
        centered = xd - mean.reshape(1, c, 1, 1)
        var = (centered * centered).mean(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        n = None
        centered = xd - running_mean.reshape(1, c, 1, 1)
        var = running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype).reshape(1, c, 1, 1)
    xhat = centered * inv_std
    out = gd * xhat + beta.data.reshape(1, c, 1, 1)

    def backward(g):
        ggamma = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gd
            if training:
                s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True)
                s2 = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
                gx = inv_std / n * (n * gxhat - s1 - xhat * s2)
            else:
                gx = gxhat * inv_std
        return gx, ggamma, gbeta

    return _result(out, (x, gamma, beta), backward)


def bce_with_logits(logits, target):
    """Mean binary cross-entropy of sigmoid(logits) against a constant target."""
    z = logits.data
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=z.dtype)
    if t.shape != z.shape:
        raise DimensionError(f"bce: logits {z.shape} vs target {t.shape}")
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    count = z.size
    p = _sigmoid_np(z)
    return _result(np.asarray(loss.mean(), dtype=z.dtype), (logits,), lambda g: (g * (p - t) / count,))
