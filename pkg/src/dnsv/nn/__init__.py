from .layers import (AddChannelAxis, AveragePool, Conv2D, Dense, L2NormScale, ReLU, ResidualBlock,
                     cross_entropy, l2norm_scale_backward, l2norm_scale_forward)
from .model import ArchConfig, Model
from .optim import PlateauSchedule, sgd_step
from .train import TrainConfig, TrainStats, crop_or_extend, train

__all__ = [
    "AddChannelAxis", "AveragePool", "Conv2D", "Dense", "L2NormScale", "ReLU", "ResidualBlock",
    "cross_entropy", "l2norm_scale_backward", "l2norm_scale_forward", "ArchConfig", "Model",
    "PlateauSchedule", "sgd_step", "TrainConfig", "TrainStats", "crop_or_extend", "train",
]
