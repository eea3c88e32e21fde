"""Compare the numba and numpy kernel backends.

    python3 benchmarks/bench_kernels.py            # kernel micro-benchmarks
    python3 benchmarks/bench_kernels.py --steps 5  # plus whole toy training steps per backend

The micro-benchmarks call both code paths in one process. Whole training
steps need the backend fixed at import time, so each backend runs in a
subprocess with RGBDGLASS_NUMBA set accordingly.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from rgbdglass import _kernels as K

# (batch, channels, size, kernel, stride, dilation): shapes that occur in the toy and default networks
CONV_CASES = [
    (8, 4, 48, 3, 1, 1),
    (8, 8, 24, 3, 1, 4),
    (8, 16, 12, 3, 2, 1),
    (2, 16, 192, 3, 1, 1),
    (2, 64, 24, 3, 1, 8),
]
POOL_CASES = [(8, 4, 96), (2, 16, 384), (2, 64, 96)]


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def row(label, t_np, t_nb):
    print(f"{label:<44s} numpy {t_np * 1e3:9.3f} ms   numba {t_nb * 1e3:9.3f} ms   speedup {t_np / t_nb:6.2f}x")


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    for b, c, s, k, stride, dil in CONV_CASES:
        pad = dil * (k // 2)
        xp = rng.standard_normal((b, c, s + 2 * pad, s + 2 * pad))
        ho = (s + 2 * pad - dil * (k - 1) - 1) // stride + 1
        cols = K.im2col(xp, k, stride, dil, ho, ho, use_numba=False)
        tag = f"[{b},{c},{s},{s}] k{k} s{stride} d{dil}"
        row("im2col " + tag,
            best_of(lambda: K.im2col(xp, k, stride, dil, ho, ho, use_numba=False), repeat),
            best_of(lambda: K.im2col(xp, k, stride, dil, ho, ho, use_numba=True), repeat))
        hp = xp.shape[2]
        row("col2im " + tag,
            best_of(lambda: K.col2im(cols, hp, hp, stride, dil, use_numba=False), repeat),
            best_of(lambda: K.col2im(cols, hp, hp, stride, dil, use_numba=True), repeat))
    for b, c, s in POOL_CASES:
        x = rng.standard_normal((b, c, s, s))
        _, idx = K.maxpool2_forward(x, use_numba=False)
        g = rng.standard_normal((b, c, s // 2, s // 2))
        tag = f"[{b},{c},{s},{s}]"
        row("maxpool fwd " + tag,
            best_of(lambda: K.maxpool2_forward(x, use_numba=False), repeat),
            best_of(lambda: K.maxpool2_forward(x, use_numba=True), repeat))
        row("maxpool bwd " + tag,
            best_of(lambda: K.maxpool2_backward(g, idx, use_numba=False), repeat),
            best_of(lambda: K.maxpool2_backward(g, idx, use_numba=True), repeat))


_STEP_SCRIPT = """
import time
from dataclasses import replace
from rgbdglass import _kernels
from rgbdglass.config import profile
from rgbdglass.glassnet import GlassNet
from rgbdglass.synth import SynthConfig, generate
from rgbdglass.training import train
net_cfg, tcfg = profile("toy")
samples = generate(SynthConfig(size=96), 8, seed=0)
train(GlassNet(net_cfg), samples, replace(tcfg, max_steps=1, augment=False))  # warm-up
net = GlassNet(net_cfg)
t0 = time.perf_counter()
res = train(net, samples, replace(tcfg, max_steps={steps}, augment=False))
print(_kernels.backend(), (time.perf_counter() - t0) / res.steps, res.step_losses[-1])
"""


def bench_steps(steps):
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, RGBDGLASS_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", _STEP_SCRIPT.format(steps=steps)],
                             env=env, capture_output=True, text=True, check=True)
        name, per_step, loss = res.stdout.split()
        out[name] = (float(per_step), loss)
    row(f"toy training step (batch 8, 96x96, {steps} steps)", out["numpy"][0], out["numba"][0])
    print(f"final loss numpy {out['numpy'][1]}  numba {out['numba'][1]}  identical: {out['numpy'][1] == out['numba'][1]}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--steps", type=int, default=0, help="also time this many toy training steps per backend")
    args = parser.parse_args()
    if not K.HAVE_NUMBA:
        sys.exit("numba is unavailable or disabled (RGBDGLASS_NUMBA); nothing to compare")
    bench_kernels(args.repeat)
    if args.steps:
        bench_steps(args.steps)


if __name__ == "__main__":
    main()
