"""Training loop, batch preparation and whole-set prediction."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import dataio
from .checkpoint import load_into, read_checkpoint, save_checkpoint
from .errors import CheckpointError, DataError
from .glassnet import hybrid_loss
from .metrics import evaluate_set
from .optim import Adam, step_lr

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    epoch_losses: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)
    steps: int = 0
    epochs: int = 0
    checkpoint: str = None


def epoch_rng(seed, epoch):
    """Shuffling/augmentation stream for one epoch; resuming at any epoch reproduces it."""
    return np.random.default_rng([int(seed), 7919, int(epoch)])


def make_batch(samples, tcfg, rng, size, dtype):
    if tcfg.augment:
        planes = [dataio.augment(s, rng, tcfg.resize, tcfg.crop, tcfg.hflip) for s in samples]
    else:
        planes = [dataio.eval_planes(s, size) for s in samples]
    return tuple(a.astype(dtype) for a in dataio.collate(planes))


def format_epoch(epoch, loss, lr):
    return f"epoch={epoch} loss={loss:.6f} lr={lr:g}"


def train(net, samples, tcfg, out_dir=None, resume=None, log=None):
    """Train ``net`` in place with Adam and the step learning-rate schedule.

    Writes ``<out_dir>/checkpoint.npz`` after every epoch and appends one
    ``epoch=<n> loss=<f> lr=<f>`` line per epoch to ``<out_dir>/train.log``.
    Stops early once ``tcfg.max_steps`` optimizer steps are done (the partial
    epoch is still logged and checkpointed).
    """
    samples = list(samples)
    if not samples:
        raise DataError("training set is empty")
    size = net.cfg.backbone.input_size
    if tcfg.augment and tcfg.crop != size:
        raise DataError(f"crop size {tcfg.crop} does not match network input size {size}")
    dtype = net.cfg.np_dtype
    opt = Adam(net.named_parameters(), lr=tcfg.lr, betas=(tcfg.beta1, tcfg.beta2), eps=tcfg.adam_eps)
    result = TrainResult()
    start_epoch = 1

    if resume:
        meta, params, m, v = read_checkpoint(resume)
        if meta["network"] != net.cfg.to_dict():
            raise CheckpointError("resume checkpoint was written for a different network config")
        load_into(net, params)
        if meta.get("optimizer"):
            opt.load_state_dict({**meta["optimizer"], "m": m, "v": v})
        state = meta.get("train", {})
        start_epoch = int(state.get("epoch", 0)) + 1
        result.steps = int(state.get("steps", 0))
        result.epoch_losses = list(state.get("epoch_losses", []))

    log_path = ckpt_path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "train.log")
        ckpt_path = os.path.join(out_dir, "checkpoint.npz")
        if not resume and os.path.exists(log_path):
            os.remove(log_path)

    net.train()
    n = len(samples)
    for epoch in range(start_epoch, tcfg.epochs + 1):
        if tcfg.max_steps and result.steps >= tcfg.max_steps:
            break
        opt.lr = step_lr(epoch, tcfg.lr, tcfg.lr_decay_epoch, tcfg.lr_decay_factor)
        rng = epoch_rng(tcfg.seed, epoch)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, tcfg.batch_size):
            if tcfg.max_steps and result.steps >= tcfg.max_steps:
                break
            batch = [samples[i] for i in order[start:start + tcfg.batch_size]]
            rgb, depth, missing, mask = make_batch(batch, tcfg, rng, size, dtype)
            loss = train_step(net, opt, rgb, depth, missing, mask, result.steps + 1)
            result.steps += 1
            result.step_losses.append(loss)
            losses.append(loss)
        epoch_loss = float(np.mean(losses))
        result.epoch_losses.append(epoch_loss)
        result.epochs = epoch
        line = format_epoch(epoch, epoch_loss, opt.lr)
        if log is not None:
            log(line)
        if log_path:
            with open(log_path, "a") as f:
                f.write(line + "\n")
        if ckpt_path:
            state = {"epoch": epoch, "steps": result.steps, "seed": tcfg.seed, "epoch_losses": result.epoch_losses}
            result.checkpoint = save_checkpoint(ckpt_path, net, opt, state)
    net.eval()
    return result


def train_step(net, opt, rgb, depth, missing, mask, step=0):
    opt.zero_grad()
    preds = net(rgb, depth, missing)
    loss, _ = hybrid_loss(preds, mask, net.cfg.loss_weights)
    loss.backward()
    value = loss.item()
    if not np.isfinite(value):
        norms = opt.grad_norms()
        worst = sorted(norms.items(), key=lambda kv: -kv[1] if np.isfinite(kv[1]) else -np.inf)[:5]
        raise FloatingPointError(
            f"non-finite loss {value} at step {step} (lr={opt.lr:g}); largest grad norms: {worst}"
        )
    opt.step()
    return value


def predict(net, samples, batch_size=8):
    """Stage-1 probability maps at network resolution, one [H,W] array per sample."""
    size = net.cfg.backbone.input_size
    dtype = net.cfg.np_dtype
    net.eval()
    out = []
    for start in range(0, len(samples), batch_size):
        planes = [dataio.eval_planes(s, size) for s in samples[start:start + batch_size]]
        rgb, depth, missing, _ = (a.astype(dtype) for a in dataio.collate(planes))
        out.extend(net.predict_proba(rgb, depth, missing))
    return out


def evaluate(net, samples, threshold=0.5):
    """MetricReport of stage-1 predictions against masks resized (nearest) to network resolution."""
    size = net.cfg.backbone.input_size
    probs = predict(net, samples)
    gts = [dataio.resize_nearest_np(s.mask, size, size) for s in samples]
    return evaluate_set(probs, gts, threshold)
