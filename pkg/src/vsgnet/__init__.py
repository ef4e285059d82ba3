"""Visual, spatial-attention and graph-convolutional human-object interaction head.

The head runs on precomputed backbone feature maps and detector boxes. All
layers, gradients and the optimiser are implemented on numpy in
:mod:`vsgnet.numcore`.
"""
from .eval import APReport, ScoredTriplet, evaluate
from .head import ABLATIONS, HeadConfig, ModelConfig, forward_image, infer, init_params, prepare_image
from .train import TrainConfig, load_checkpoint, save_checkpoint, train_loop

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS",
    "APReport",
    "HeadConfig",
    "ModelConfig",
    "ScoredTriplet",
    "TrainConfig",
    "evaluate",
    "forward_image",
    "infer",
    "init_params",
    "load_checkpoint",
    "prepare_image",
    "save_checkpoint",
    "train_loop",
]
