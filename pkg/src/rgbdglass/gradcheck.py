"""Finite-difference verification of reverse-mode gradients.

The error measure used throughout is

    max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-3 * max_j |n_j|)

for analytic gradient ``a`` and central difference ``n``: elementwise relative
error, with entries far below the gradient's overall scale compared against
that scale instead of against themselves.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .backbones import BackboneConfig
from .ccm import CCM
from .daa import DAAStream, daa_attend
from .glassnet import Decoder, GlassNet, NetworkConfig, hybrid_loss
from .nn import AttentionHead, ConvBR, channel_attention, context_attention
from .tensor import Tensor

OPERATOR_TOL = 1e-4
NETWORK_TOL = 1e-3


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    tol: float
    n_checked: int

    @property
    def passed(self):
        return bool(self.max_rel_error <= self.tol)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<28s} rel_err={self.max_rel_error:.2e} tol={self.tol:.0e} n={self.n_checked}"


def relative_error(analytic, numeric):
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    if a.size == 0:
        return 0.0
    floor = max(1e-3 * float(np.abs(n).max()), 1e-12)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check(name, loss_fn, tensors, h=1e-3, tol=OPERATOR_TOL, max_entries=None, rng=None):
    """Compare autograd and central differences of scalar ``loss_fn()`` w.r.t. ``tensors``.

    ``tensors`` are leaves whose ``.data`` is perturbed in place (and
    restored). With ``max_entries`` only that many randomly chosen entries
    (across all tensors) are differenced.
    """
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    index = [(ti, flat) for ti, t in enumerate(tensors) for flat in range(t.size)]
    if max_entries is not None and len(index) > max_entries:
        rng = np.random.default_rng(0) if rng is None else rng
        pick = rng.choice(len(index), size=max_entries, replace=False)
        index = [index[i] for i in sorted(pick)]

    a_vals, n_vals = [], []
    for ti, flat in index:
        arr = tensors[ti].data.reshape(-1)
        old = arr[flat]
        arr[flat] = old + h
        up = loss_fn().item()
        arr[flat] = old - h
        down = loss_fn().item()
        arr[flat] = old
        n_vals.append((up - down) / (2 * h))
        a_vals.append(analytic[ti].reshape(-1)[flat])
    for t in tensors:
        t.grad = None
    return GradCheckResult(name, relative_error(a_vals, n_vals), tol, len(index))


def projected(out, rng):
    """Scalar sum(out * R) with a fixed random R, turning any output into a test loss."""
    r = rng.standard_normal(out.shape)
    return (out * Tensor(r)).sum()


def _leaf(rng, shape, offset=0.0):
    return Tensor(rng.standard_normal(shape) + offset, requires_grad=True)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    x = np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)
    return Tensor(x, requires_grad=True)


# --------------------------------------------------------------------------
# suites


def operator_suite(seed=0):
    rng = np.random.default_rng(seed)
    results = []

    def run(name, build, tensors, **kw):
        r = rng.standard_normal(build().shape)

        def loss():
            return (build() * Tensor(r)).sum()

        results.append(check(name, loss, tensors, **kw))

    a, b = _leaf(rng, (2, 3, 4, 5)), _leaf(rng, (1, 3, 1, 5))
    run("add (broadcast)", lambda: a + b, [a, b])
    run("mul (broadcast)", lambda: a * b, [a, b])
    pos = Tensor(rng.uniform(0.5, 2.0, (2, 3, 4)), requires_grad=True)
    num = _leaf(rng, (2, 3, 4))
    run("div", lambda: num / pos, [num, pos])
    run("exp", lambda: T.exp(num), [num])
    run("log", lambda: T.log(pos), [pos])
    m1, m2 = _leaf(rng, (2, 4, 3)), _leaf(rng, (2, 3, 5))
    run("matmul (batched)", lambda: m1 @ m2, [m1, m2])
    run("sum/mean", lambda: a.sum(axis=(2, 3), keepdims=True) * 0.5 + a.mean(axis=1, keepdims=True), [a])
    run("reshape/transpose", lambda: a.reshape(2, 3, 20).transpose(0, 2, 1), [a])
    c1, c2 = _leaf(rng, (2, 2, 3, 3)), _leaf(rng, (2, 4, 3, 3))
    run("concat", lambda: T.concat([c1, c2], axis=1), [c1, c2])

    x = _away_from_zero(rng, (2, 4, 6, 6))
    run("relu", lambda: T.relu(x), [x])
    run("sigmoid", lambda: T.sigmoid(x), [x])
    run("softmax_last_axis", lambda: T.softmax(x), [x])

    for stride, pad, dil, k in ((1, 1, 1, 3), (2, 1, 1, 3), (1, 2, 2, 3), (1, 0, 1, 1), (1, 4, 4, 3)):
        xi = _leaf(rng, (2, 4, 6, 6))
        w = _leaf(rng, (3, 4, k, k))
        bias = _leaf(rng, (3,))
        run(
            f"conv2d k{k} s{stride} p{pad} d{dil}",
            lambda xi=xi, w=w, bias=bias, s=stride, p=pad, d=dil: T.conv2d(xi, w, bias, s, p, d),
            [xi, w, bias],
        )

    vals = rng.permutation(2 * 4 * 6 * 6).reshape(2, 4, 6, 6) * 0.01
    xp = Tensor(vals, requires_grad=True)
    run("max_pool2x2", lambda: T.max_pool2x2(xp), [xp])
    run("global_avg_pool", lambda: T.global_avg_pool(x), [x])
    xr = _leaf(rng, (2, 3, 4, 5))
    run("resize_bilinear up", lambda: T.resize_bilinear(xr, 7, 9), [xr])
    run("resize_bilinear down", lambda: T.resize_bilinear(xr, 3, 2), [xr])

    g, be = Tensor(rng.uniform(0.5, 1.5, 4), requires_grad=True), _leaf(rng, (4,))
    xb = _leaf(rng, (2, 4, 6, 6))
    run(
        "batch_norm (train)",
        lambda: T.batch_norm(xb, g, be, np.zeros(4), np.ones(4), True),
        [xb, g, be],
    )
    rm, rv = rng.standard_normal(4) * 0.1, rng.uniform(0.5, 2.0, 4)
    run("batch_norm (eval)", lambda: T.batch_norm(xb, g, be, rm, rv, False), [xb, g, be])

    z = _leaf(rng, (2, 1, 5, 5))
    tgt = (rng.random((2, 1, 5, 5)) < 0.5).astype(float)
    results.append(check("bce_with_logits", lambda: T.bce_with_logits(z, tgt), [z]))
    return results


def _randomize_bn(module, rng):
    """Non-trivial BN running stats and affine terms so eval-mode checks exercise them."""
    for name, buf in module.named_buffers():
        if name.endswith("running_mean"):
            buf[...] = rng.standard_normal(buf.shape) * 0.1
        elif name.endswith("running_var"):
            buf[...] = rng.uniform(0.5, 1.5, buf.shape)
    for name, p in module.named_parameters():
        if name.endswith("bn_beta") or name.endswith(".bias"):
            p.data[...] = rng.standard_normal(p.shape) * 0.1


def block_suite(seed=0, h=1e-5, entries=40):
    """Composite blocks in eval mode, double precision."""
    rng = np.random.default_rng(seed)
    results = []

    def run(name, module, fn, inputs):
        module.eval()
        _randomize_bn(module, rng)
        params = [p for p in module.parameters() if p.requires_grad]
        r_shape = fn().shape
        r = rng.standard_normal(r_shape)

        def loss():
            return (fn() * Tensor(r)).sum()

        results.append(check(name, loss, inputs + params, h=h, max_entries=entries, rng=rng))

    x = _leaf(rng, (2, 4, 6, 6))
    cbr = ConvBR(4, 5, 3, rng=rng)
    run("conv_br (eval)", cbr, lambda: cbr(x), [x])

    head = AttentionHead(12, 12, rng=rng)
    xa = _leaf(rng, (2, 12, 5, 5))
    run("channel attention (CNA)", head, lambda: channel_attention(xa, head), [xa])
    chead = AttentionHead(12, 6, rng=rng)
    run("context attention (CXA)", chead, lambda: context_attention(xa, chead, 6), [xa])

    ccm = CCM(4, 3, 6, rng=rng)
    xr, xd = _leaf(rng, (1, 4, 6, 6)), _leaf(rng, (1, 3, 6, 6))
    run("CCM", ccm, lambda: ccm(xr, xd).crc, [xr, xd])

    stream = DAAStream(8, rng=rng)
    stream.gamma.data[...] = 0.7
    xq = _leaf(rng, (1, 8, 3, 3))
    dm = Tensor((rng.random((1, 1, 3, 3)) < 0.4).astype(float))
    run("DAA attend", stream, lambda: daa_attend(xq, dm, stream), [xq])

    dec = Decoder(6, rng)
    xdec = _leaf(rng, (2, 6, 5, 5))
    run("decoder", dec, lambda: dec(xdec), [xdec])

    logits = [_leaf(rng, (2, 1, 8, 8)) for _ in range(4)]
    gt = (rng.random((2, 1, 8, 8)) < 0.4).astype(float)

    class _P:
        def __init__(self, t):
            self.logits_full = t

    results.append(
        check("hybrid loss", lambda: hybrid_loss([_P(t) for t in logits], gt)[0], logits, h=1e-5)
    )
    return results


def toy_network_config():
    return NetworkConfig(
        backbone=BackboneConfig((4, 8, 16, 32), (4, 8, 16, 32, 64), 96), c_ctx=(8, 8, 8, 8)
    )


def network_check(seed=0, n_params=20, h=1e-6, tol=NETWORK_TOL):
    """Total-loss gradients w.r.t. ``n_params`` random parameter entries of the toy network."""
    rng = np.random.default_rng(seed)
    net = GlassNet(toy_network_config(), seed=seed)
    _randomize_bn(net, rng)
    for stream in (s for m in net.daa_modules() for s in m.streams()):
        stream.gamma.data[...] = rng.uniform(0.3, 1.0)
    net.eval()
    rgb = rng.random((1, 3, 96, 96))
    depth = rng.random((1, 1, 96, 96))
    dm = (rng.random((1, 1, 96, 96)) < 0.3).astype(float)
    depth[dm == 1] = 0
    gt = (rng.random((1, 1, 96, 96)) < 0.4).astype(float)

    def loss():
        return hybrid_loss(net(rgb, depth, dm), gt)[0]

    params = [p for p in net.parameters() if p.requires_grad]
    return check("end-to-end toy network", loss, params, h=h, tol=tol, max_entries=n_params, rng=rng)


def run_all(seed=0, log=print):
    """Run every suite; returns (all_passed, results, seconds)."""
    t0 = time.perf_counter()
    results = operator_suite(seed) + block_suite(seed) + [network_check(seed)]
    for r in results:
        log(r.line())
    return all(r.passed for r in results), results, time.perf_counter() - t0
