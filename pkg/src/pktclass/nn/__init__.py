"""Minimal deterministic neural-network engine built on numpy arrays."""

from .adam import Adam
from .layers import (
    BatchNorm1D,
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool1D,
    ReLU,
    Softmax,
)
from .losses import cross_entropy_loss, mse_loss
from .model import Model, load_model, parse_architecture, save_model

__all__ = [
    "Adam",
    "BatchNorm1D",
    "Conv1D",
    "Dense",
    "Dropout",
    "Flatten",
    "Layer",
    "MaxPool1D",
    "Model",
    "ReLU",
    "Softmax",
    "cross_entropy_loss",
    "load_model",
    "mse_loss",
    "parse_architecture",
    "save_model",
]
