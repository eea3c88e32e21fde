"""Checkpoint container.

A checkpoint is an uncompressed ``.npz`` (zip of ``.npy`` arrays):

* ``__meta__``: uint8 array holding UTF-8 JSON with ``format``
  (``"rgbdglass-checkpoint"``), ``version``, ``network`` (NetworkConfig as a
  dict), ``optimizer`` scalars and ``train`` state (epoch, global step, seed).
* ``param/<name>``: every parameter and buffer (BatchNorm running stats).
* ``adam_m/<name>``, ``adam_v/<name>``: Adam moments, when saved with an optimizer.

All arrays are stored little-endian. Names are the dotted module paths,
for example ``ccm4.rgb.pyramid.r8.conv.weight``.
"""

import json
import os
import tempfile

import numpy as np

from .errors import CheckpointError
from .glassnet import GlassNet, NetworkConfig

FORMAT = "rgbdglass-checkpoint"
VERSION = 1


def _le(a):
    a = np.asarray(a)
    return a.astype(a.dtype.newbyteorder("<")) if a.dtype.byteorder == ">" else a


def save_checkpoint(path, net, optimizer=None, train_state=None):
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "network": net.cfg.to_dict(),
        "train": dict(train_state or {}),
        "optimizer": None,
    }
    arrays = {f"param/{k}": _le(v) for k, v in net.state_dict().items()}
    if optimizer is not None:
        st = optimizer.state_dict()
        meta["optimizer"] = {k: st[k] for k in ("lr", "beta1", "beta2", "eps", "step")}
        arrays.update({f"adam_m/{k}": _le(v) for k, v in st["m"].items()})
        arrays.update({f"adam_v/{k}": _le(v) for k, v in st["v"].items()})
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)

    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, suffix=".npz.tmp")
    os.close(fd)
    try:
        with open(tmp, "wb") as f:
            np.savez(f, **arrays)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
    return path


def read_checkpoint(path):
    """Return (meta, params, adam_m, adam_v) dictionaries."""
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint {path} not found")
    try:
        with np.load(path, allow_pickle=False) as z:
            files = {k: z[k] for k in z.files}
    except (OSError, ValueError) as e:
        raise CheckpointError(f"{path}: not a readable checkpoint ({e})") from e
    if "__meta__" not in files:
        raise CheckpointError(f"{path}: missing __meta__ header")
    meta = json.loads(files.pop("__meta__").tobytes().decode("utf-8"))
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unknown format {meta.get('format')!r}")
    if meta.get("version", 0) > VERSION:
        raise CheckpointError(f"{path}: checkpoint version {meta['version']} is newer than {VERSION}")
    groups = {"param": {}, "adam_m": {}, "adam_v": {}}
    for key, arr in files.items():
        group, _, name = key.partition("/")
        if group in groups:
            groups[group][name] = arr
    return meta, groups["param"], groups["adam_m"], groups["adam_v"]


def load_into(net, params):
    """Copy checkpoint arrays into ``net``; CheckpointError lists missing/extra names."""
    expected = set(net.state_dict())
    missing = sorted(expected - set(params))
    extra = sorted(set(params) - expected)
    if missing or extra:
        raise CheckpointError(
            "checkpoint does not match the network:\n"
            f"  missing ({len(missing)}): {', '.join(missing) or '-'}\n"
            f"  unexpected ({len(extra)}): {', '.join(extra) or '-'}"
        )
    try:
        net.load_state_dict(params)
    except ValueError as e:
        raise CheckpointError(str(e)) from e


def load_network(path, cfg=None):
    """Build a GlassNet from the checkpoint's stored config (or ``cfg``) and load its weights."""
    meta, params, _, _ = read_checkpoint(path)
    cfg = NetworkConfig.from_dict(meta["network"]) if cfg is None else cfg
    net = GlassNet(cfg)
    load_into(net, params)
    net.eval()
    return net, meta
