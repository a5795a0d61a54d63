from .layers import BatchNorm, Conv2d, Flatten, Linear, MaxPool2d, ReLU, Tensor, softmax, softmax_cross_entropy
from .model import Architecture, CnnModel, PRESETS
from .optim import Adam
from .train import TrainConfig, train

__all__ = [
    "Adam", "Architecture", "BatchNorm", "CnnModel", "Conv2d", "Flatten", "Linear", "MaxPool2d",
    "PRESETS", "ReLU", "Tensor", "TrainConfig", "softmax", "softmax_cross_entropy", "train",
]
