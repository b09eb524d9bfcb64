"""Minimal deterministic neural engine for tabular keystroke features."""

from .layers import Activation, BatchNorm, Conv2D, Dense, Dropout, Flatten, LSTMStack, RNNStack
from .network import (
    ARCHITECTURES,
    Network,
    NetworkSpec,
    TrainConfig,
    TrainedNetwork,
    build_architecture,
    sequence_shape,
    square_side,
    to_sequence,
    to_square_image,
    train_network,
)

__all__ = [
    "ARCHITECTURES", "Activation", "BatchNorm", "Conv2D", "Dense", "Dropout", "Flatten",
    "LSTMStack", "Network", "NetworkSpec", "RNNStack", "TrainConfig", "TrainedNetwork",
    "build_architecture", "sequence_shape", "square_side", "to_sequence", "to_square_image",
    "train_network",
]
