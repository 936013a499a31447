"""The two classifier architectures.

The stacked autoencoder is five dense encoder blocks (400, 300, 200, 100, 50
units, each with ReLU and 0.05 dropout) topped by a softmax classifier.  The
convolutional model is two valid 1-D convolutions, ReLU after each, one max
pool, then a three-layer dense head with dropout and a softmax classifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InvalidGeometry
from .nn.layers import Conv1D, Dense, Dropout, Flatten, MaxPool1D, ReLU, Softmax
from .nn.model import Model
from .seeds import derive_seed

INPUT_DIM = 1500


@dataclass(frozen=True)
class ConvSpec:
    size: int
    count: int
    stride: int


@dataclass(frozen=True)
class PoolSpec:
    size: int = 2
    stride: int = 2


@dataclass
class SAEConfig:
    encoder_sizes: tuple[int, ...] = (400, 300, 200, 100, 50)
    dropout_rate: float = 0.05
    n_classes: int = 17
    pretrain_epochs: int = 200
    finetune_epochs: int = 200
    input_dim: int = INPUT_DIM


@dataclass
class CNNConfig:
    c1: ConvSpec = field(default_factory=lambda: ConvSpec(size=4, count=200, stride=3))
    c2: ConvSpec = field(default_factory=lambda: ConvSpec(size=5, count=200, stride=1))
    pool: PoolSpec = field(default_factory=PoolSpec)
    fc_sizes: tuple[int, ...] = (200, 100, 50)
    dropout_rate: float = 0.05
    n_classes: int = 17
    epochs: int = 300
    input_dim: int = INPUT_DIM


def app_cnn_config(**overrides) -> CNNConfig:
    """Tuned convolution geometry for the 17-class application task."""
    return replace(
        CNNConfig(c1=ConvSpec(4, 200, 3), c2=ConvSpec(5, 200, 1), n_classes=17), **overrides
    )


def char_cnn_config(**overrides) -> CNNConfig:
    """Tuned convolution geometry for the 12-class characterization task."""
    return replace(
        CNNConfig(c1=ConvSpec(5, 200, 3), c2=ConvSpec(4, 200, 3), n_classes=12), **overrides
    )


def build_sae(
    cfg: SAEConfig, seed: int = 0, class_names: Optional[Sequence[str]] = None
) -> Model:
    if not cfg.encoder_sizes:
        raise ConfigError("encoder_sizes must not be empty")
    if list(cfg.encoder_sizes) != sorted(cfg.encoder_sizes, reverse=True) or len(
        set(cfg.encoder_sizes)
    ) != len(cfg.encoder_sizes):
        raise ConfigError(f"encoder sizes must be strictly decreasing: {cfg.encoder_sizes}")
    if cfg.n_classes < 2:
        raise ConfigError("need at least two classes")
    master = np.random.SeedSequence(derive_seed(seed, "sae-init"))
    children = iter(master.spawn(len(cfg.encoder_sizes) + 1))
    layers = []
    in_dim = cfg.input_dim
    for width in cfg.encoder_sizes:
        layers += [
            Dense(in_dim, width, rng=np.random.default_rng(next(children))),
            ReLU(),
            Dropout(cfg.dropout_rate),
        ]
        in_dim = width
    layers += [
        Dense(in_dim, cfg.n_classes, rng=np.random.default_rng(next(children))),
        Softmax(),
    ]
    return Model(layers, class_names=list(class_names) if class_names else None)


def conv_out_len(n: int, size: int, stride: int) -> int:
    if size > n:
        raise InvalidGeometry(f"window {size} longer than input {n}")
    if size < 1 or stride < 1:
        raise InvalidGeometry(f"window {size} / stride {stride} must be positive")
    return (n - size) // stride + 1


def cnn_geometry(cfg: CNNConfig) -> dict[str, int]:
    """Intermediate lengths of the convolutional stack; raises InvalidGeometry."""
    after_c1 = conv_out_len(cfg.input_dim, cfg.c1.size, cfg.c1.stride)
    after_c2 = conv_out_len(after_c1, cfg.c2.size, cfg.c2.stride)
    after_pool = conv_out_len(after_c2, cfg.pool.size, cfg.pool.stride)
    return {
        "after_c1": after_c1,
        "after_c2": after_c2,
        "after_pool": after_pool,
        "flattened": after_pool * cfg.c2.count,
    }


def build_cnn(
    cfg: CNNConfig, seed: int = 0, class_names: Optional[Sequence[str]] = None
) -> Model:
    if cfg.n_classes < 2:
        raise ConfigError("need at least two classes")
    if not cfg.fc_sizes:
        raise ConfigError("fc_sizes must not be empty")
    geometry = cnn_geometry(cfg)  # fail fast before any parameters are allocated
    master = np.random.SeedSequence(derive_seed(seed, "cnn-init"))
    children = iter(master.spawn(len(cfg.fc_sizes) + 3))
    layers = [
        Conv1D(1, cfg.c1.count, cfg.c1.size, cfg.c1.stride, rng=np.random.default_rng(next(children))),
        ReLU(),
        Conv1D(
            cfg.c1.count,
            cfg.c2.count,
            cfg.c2.size,
            cfg.c2.stride,
            rng=np.random.default_rng(next(children)),
        ),
        ReLU(),
        MaxPool1D(cfg.pool.size, cfg.pool.stride),
        Flatten(),
    ]
    in_dim = geometry["flattened"]
    for width in cfg.fc_sizes:
        layers += [
            Dense(in_dim, width, rng=np.random.default_rng(next(children))),
            ReLU(),
            Dropout(cfg.dropout_rate),
        ]
        in_dim = width
    layers += [
        Dense(in_dim, cfg.n_classes, rng=np.random.default_rng(next(children))),
        Softmax(),
    ]
    return Model(layers, class_names=list(class_names) if class_names else None)
