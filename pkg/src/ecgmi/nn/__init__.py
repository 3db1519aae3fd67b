"""From-scratch convolutional network (float64 numpy) for VGG-MI1/VGG-MI2."""

from .checkpoint import load_checkpoint, save_checkpoint
from .network import (
    LayerSpec,
    NetworkParams,
    build_architecture,
    init_params,
    shape_trace,
)
from .train import (
    TrainConfig,
    TrainResult,
    extract_features,
    extract_features_batch,
    predict_batch,
    predict_mi1,
    train_mi1,
)

__all__ = [
    "LayerSpec",
    "NetworkParams",
    "TrainConfig",
    "TrainResult",
    "build_architecture",
    "extract_features",
    "extract_features_batch",
    "init_params",
    "load_checkpoint",
    "predict_batch",
    "predict_mi1",
    "save_checkpoint",
    "shape_trace",
    "train_mi1",
]
