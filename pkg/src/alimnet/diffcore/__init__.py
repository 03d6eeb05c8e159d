"""Small reverse-mode differentiation engine with the layer catalog the
AlimNet discriminator and generator need."""
from . import functional
from .gradcheck import gradient_check
from .layers import (
    GRU, Activation, BatchNorm, Conv2D, Dense, Dropout, Layer, MaxPool2D, Network, Reshape,
    UpSample2D,
)
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, is_grad_enabled, no_grad

__all__ = [
    "Activation", "Adam", "AdamState", "BatchNorm", "Conv2D", "Dense", "Dropout", "GRU", "Layer",
    "MaxPool2D", "Network", "Reshape", "Tensor", "UpSample2D", "adam_step", "functional",
    "gradient_check", "is_grad_enabled", "no_grad",
]
