"""RGB-D glass surface segmentation with cross-modal context mining and depth-missing aware attention."""

from .config import RunConfig, TrainConfig, profile
from .glassnet import GlassNet, NetworkConfig, hybrid_loss
from .metrics import MetricReport, evaluate_set
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "GlassNet",
    "MetricReport",
    "NetworkConfig",
    "RunConfig",
    "Tensor",
    "TrainConfig",
    "evaluate_set",
    "hybrid_loss",
    "profile",
]
