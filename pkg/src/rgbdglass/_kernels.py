"""Hot inner loops of the tensor kernel.

Each kernel exists twice: a numba ``@njit`` version and a pure-numpy
version. The numba path is used when numba imports and the environment
variable ``RGBDGLASS_NUMBA`` is not set to ``0``/``false``/``off``. Both
paths produce bit-identical results (they perform the same additions in the
same order), which ``tests/test_kernels.py`` asserts.
"""

import os

import numpy as np

_FLAG = os.environ.get("RGBDGLASS_NUMBA", "1").strip().lower()
_WANT_NUMBA = _FLAG not in ("0", "false", "off", "no")

try:
    if not _WANT_NUMBA:
        raise ImportError("numba disabled by RGBDGLASS_NUMBA")
    from numba import njit
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# --------------------------------------------------------------------------
# pure-numpy implementations


def _im2col_np(xp, k, stride, dilation, ho, wo):
    b, c = xp.shape[:2]
    cols = np.empty((b, c, k, k, ho, wo), dtype=xp.dtype)
    h_span = stride * (ho - 1) + 1
    w_span = stride * (wo - 1) + 1
    for i in range(k):
        hi = i * dilation
        for j in range(k):
            wj = j * dilation
            cols[:, :, i, j] = xp[:, :, hi:hi + h_span:stride, wj:wj + w_span:stride]
    return cols


def _col2im_np(cols, hp, wp, stride, dilation):
    b, c, k, _, ho, wo = cols.shape
    out = np.zeros((b, c, hp, wp), dtype=cols.dtype)
    h_span = stride * (ho - 1) + 1
    w_span = stride * (wo - 1) + 1
    for i in range(k):
        hi = i * dilation
        for j in range(k):
            wj = j * dilation
            out[:, :, hi:hi + h_span:stride, wj:wj + w_span:stride] += cols[:, :, i, j]
    return out


def _maxpool2_fwd_np(x):
    b, c, h, w = x.shape
    win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(b, c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1)  # first maximum in row-major window order
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx.astype(np.int8)


def _maxpool2_bwd_np(g, idx):
    b, c, h2, w2 = g.shape
    win = np.zeros((b, c, h2, w2, 4), dtype=g.dtype)
    np.put_along_axis(win, idx[..., None].astype(np.intp), g[..., None], axis=-1)
    win = win.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return win.reshape(b, c, 2 * h2, 2 * w2)


# --------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    # Outputs are allocated by the numpy callers and filled in place: numba's own
    # allocator does not recycle large blocks, and fresh pages cost more than the loops.

    @njit(cache=True)
    def _im2col_nb(xp, k, stride, dilation, cols):
        b, c = xp.shape[0], xp.shape[1]
        ho, wo = cols.shape[4], cols.shape[5]
        for n in range(b):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        for oh in range(ho):
                            r = oh * stride + i * dilation
                            for ow in range(wo):
                                cols[n, ch, i, j, oh, ow] = xp[n, ch, r, ow * stride + j * dilation]

    @njit(cache=True)
    def _col2im_nb(cols, stride, dilation, out):
        b, c, k = cols.shape[0], cols.shape[1], cols.shape[2]
        ho, wo = cols.shape[4], cols.shape[5]
        # tap-major order matches the numpy path's accumulation order
        for n in range(b):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        for oh in range(ho):
                            r = oh * stride + i * dilation
                            for ow in range(wo):
                                out[n, ch, r, ow * stride + j * dilation] += cols[n, ch, i, j, oh, ow]

    @njit(cache=True)
    def _maxpool2_fwd_nb(x, out, idx):
        b, c, h2, w2 = out.shape
        for n in range(b):
            for ch in range(c):
                for i in range(h2):
                    for j in range(w2):
                        best = x[n, ch, 2 * i, 2 * j]
                        arg = 0
                        for t in range(1, 4):
                            v = x[n, ch, 2 * i + t // 2, 2 * j + t % 2]
                            if v > best:
                                best = v
                                arg = t
                        out[n, ch, i, j] = best
                        idx[n, ch, i, j] = arg

    @njit(cache=True)
    def _maxpool2_bwd_nb(g, idx, out):
        b, c, h2, w2 = g.shape
        for n in range(b):
            for ch in range(c):
                for i in range(h2):
                    for j in range(w2):
                        t = idx[n, ch, i, j]
                        out[n, ch, 2 * i + t // 2, 2 * j + t % 2] = g[n, ch, i, j]


# --------------------------------------------------------------------------
# dispatch


def backend():
    """Name of the active kernel backend: ``"numba"`` or ``"numpy"``."""
    return "numba" if HAVE_NUMBA else "numpy"


def im2col(xp, k, stride, dilation, ho, wo, use_numba=None):
    """Gather k x k (dilated, strided) patches of a padded [B,C,Hp,Wp] array.

    Returns an array of shape [B, C, k, k, Ho, Wo].
    """
    if _pick(use_numba):
        cols = np.empty(xp.shape[:2] + (k, k, ho, wo), dtype=xp.dtype)
        _im2col_nb(np.ascontiguousarray(xp), k, stride, dilation, cols)
        return cols
    return _im2col_np(xp, k, stride, dilation, ho, wo)


def col2im(cols, hp, wp, stride, dilation, use_numba=None):
    """Adjoint of :func:`im2col`: scatter-add patches back to [B,C,Hp,Wp]."""
    if _pick(use_numba):
        out = np.zeros(cols.shape[:2] + (hp, wp), dtype=cols.dtype)
        _col2im_nb(np.ascontiguousarray(cols), stride, dilation, out)
        return out
    return _col2im_np(cols, hp, wp, stride, dilation)


def maxpool2_forward(x, use_numba=None):
    """2x2 stride-2 max pool; returns (values, window argmax in 0..3)."""
    if _pick(use_numba):
        b, c, h, w = x.shape
        out = np.empty((b, c, h // 2, w // 2), dtype=x.dtype)
        idx = np.empty((b, c, h // 2, w // 2), dtype=np.int8)
        _maxpool2_fwd_nb(np.ascontiguousarray(x), out, idx)
        return out, idx
    return _maxpool2_fwd_np(x)


def maxpool2_backward(g, idx, use_numba=None):
    if _pick(use_numba):
        b, c, h2, w2 = g.shape
        out = np.zeros((b, c, 2 * h2, 2 * w2), dtype=g.dtype)
        _maxpool2_bwd_nb(np.ascontiguousarray(g), np.ascontiguousarray(idx), out)
        return out
    return _maxpool2_bwd_np(g, idx)


def _pick(use_numba):
    if use_numba is None:
        return HAVE_NUMBA
    if use_numba and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but unavailable")
    return bool(use_numba)
