"""maskshift: attention-masked unpaired object transfiguration at toy scale."""

from .engine import Tensor, forward, OP_CATALOG
from .estimator import AttentionTranslator
from .losses import LossWeights, LossReport
from .networks import ModelBundle, build_bundle, compose, map_f, map_g
from .train import ReplayBuffer, TrainConfig, train_loop, train_step

__all__ = [
    "Tensor", "forward", "OP_CATALOG",
    "AttentionTranslator",
    "LossWeights", "LossReport",
    "ModelBundle", "build_bundle", "compose", "map_f", "map_g",
    "ReplayBuffer", "TrainConfig", "train_loop", "train_step",
]

__version__ = "0.1.0"
