"""Training recipe, network profiles and the ``key = value`` run-config format."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .backbones import DEPTH_CHANNELS, BackboneConfig
from .errors import ConfigurationError
from .glassnet import NetworkConfig


@dataclass
class TrainConfig:
    epochs: int = 130
    batch_size: int = 14
    lr: float = 1e-4
    lr_decay_epoch: int = 120
    lr_decay_factor: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    resize: int = 400
    crop: int = 384
    hflip: bool = True
    augment: bool = True
    seed: int = 0
    max_steps: int = 0  # 0 = no step limit

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.crop > self.resize:
            raise ConfigurationError(f"crop {self.crop} larger than resize {self.resize}")


PROFILES = {
    # widths large enough that the fixed depth backbone is a small fraction of the RGB one
    "paper": (
        NetworkConfig(backbone=BackboneConfig((64, 128, 256, 512), DEPTH_CHANNELS, 384)),
        TrainConfig(),
    ),
    "toy": (
        NetworkConfig(backbone=BackboneConfig((4, 8, 16, 32), (4, 8, 16, 32, 64), 96), c_ctx=(8, 8, 8, 8)),
        TrainConfig(epochs=500, batch_size=8, lr=3e-3, lr_decay_epoch=10**9, resize=100, crop=96),
    ),
}


def profile(name):
    """(NetworkConfig, TrainConfig) copies for a named profile."""
    if name not in PROFILES:
        raise ConfigurationError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    net, train = PROFILES[name]
    return NetworkConfig.from_dict(net.to_dict()), replace(train)


# --------------------------------------------------------------------------
# run config: flat ``key = value`` text


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default, help)
SCHEMA = {
    "dataset": (str, "", "dataset root (images/, depths/, masks/, train.txt, test.txt)"),
    "split": (str, "train", "manifest split to read"),
    "profile": (str, "paper", "network profile: toy or paper"),
    "seed": (int, 0, "master random seed"),
    "epochs": (int, None, "training epochs (profile default)"),
    "batch_size": (int, None, "mini-batch size (profile default)"),
    "lr": (float, None, "initial Adam learning rate (profile default)"),
    "lr_decay_epoch": (int, None, "last epoch at the initial learning rate"),
    "max_steps": (int, 0, "stop after this many optimizer steps (0 = no limit)"),
    "augment": (_bool, True, "random resize-crop and horizontal flip during training"),
    "daa": (_bool, True, "use depth-missing aware attention at stages 4 and 3"),
    "trainable_gamma": (_bool, True, "learn the attention gains (false freezes them at 0)"),
    "dtype": (str, "float64", "float64 or float32 parameters"),
    "out": (str, "runs", "output directory"),
    "resume": (str, "", "checkpoint to resume training from"),
}


@dataclass
class RunConfig:
    dataset: str = ""
    split: str = "train"
    profile: str = "paper"
    seed: int = 0
    epochs: int = None
    batch_size: int = None
    lr: float = None
    lr_decay_epoch: int = None
    max_steps: int = 0
    augment: bool = True
    daa: bool = True
    trainable_gamma: bool = True
    dtype: str = "float64"
    out: str = "runs"
    resume: str = ""

    def build(self):
        """Resolve into (NetworkConfig, TrainConfig)."""
        net, train = profile(self.profile)
        overrides = {
            k: getattr(self, k) for k in ("epochs", "batch_size", "lr", "lr_decay_epoch") if getattr(self, k) is not None
        }
        train = replace(train, seed=self.seed, max_steps=self.max_steps, augment=self.augment, **overrides)
        d = net.to_dict()
        d["dtype"] = self.dtype
        d["trainable_gamma"] = self.trainable_gamma
        if not self.daa:
            d["daa_stages"] = []
        return NetworkConfig.from_dict(d), train


def parse_config_text(text):
    """Parse ``key = value`` lines ('#' starts a comment) into typed values."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return coerce(values)


def coerce(values):
    out = {}
    for key, value in values.items():
        if key not in SCHEMA:
            raise ConfigurationError(f"unknown config key {key!r}; known keys: {', '.join(SCHEMA)}")
        if value is None:
            continue
        parser = SCHEMA[key][0]
        try:
            out[key] = parser(value) if isinstance(value, str) or parser is not _bool else bool(value)
        except ValueError as e:
            raise ConfigurationError(f"config key {key!r}: {e}") from e
    if "profile" in out and out["profile"] not in PROFILES:
        raise ConfigurationError(f"unknown profile {out['profile']!r}")
    if "dtype" in out and out["dtype"] not in ("float32", "float64"):
        raise ConfigurationError(f"dtype must be float32 or float64, got {out['dtype']!r}")
    return out


def load_run_config(path=None, overrides=None):
    values = {}
    if path:
        with open(path) as f:
            values.update(parse_config_text(f.read()))
    values.update(coerce({k: v for k, v in (overrides or {}).items() if v is not None}))
    known = {f.name for f in fields(RunConfig)}
    return RunConfig(**{k: v for k, v in values.items() if k in known})
