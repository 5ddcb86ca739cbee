"""From-scratch CNN engine and architecture-scaling laboratory."""

__version__ = "0.1.0"

from .architecture import (  # noqa: E402
    ArchitectureSpec,
    LayerSummaryRow,
    ScaleFactors,
    arch_from_file,
    arch_to_file,
    baseline_arch,
    infer_shapes,
    preset,
    scale_compound,
    scale_depth,
    scale_resolution,
    scale_width,
)
from .layers import LayerSpec  # noqa: E402
from .optim import AdamHyper, AdamState, adam_step, cross_entropy_loss, softmax  # noqa: E402
from .tensor import Rng  # noqa: E402
from .training import Model, TrainConfig, build_model, load_model, save_model, train  # noqa: E402

__all__ = [
    "AdamHyper",
    "AdamState",
    "ArchitectureSpec",
    "LayerSpec",
    "LayerSummaryRow",
    "Model",
    "Rng",
    "ScaleFactors",
    "TrainConfig",
    "adam_step",
    "arch_from_file",
    "arch_to_file",
    "baseline_arch",
    "build_model",
    "cross_entropy_loss",
    "infer_shapes",
    "load_model",
    "preset",
    "save_model",
    "scale_compound",
    "scale_depth",
    "scale_resolution",
    "scale_width",
    "softmax",
    "train",
]
