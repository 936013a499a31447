"""Layer set: dense, 1-D convolution, max pooling, ReLU, dropout, batch norm,
softmax, flatten.

Conventions: batches are the leading axis; dense layers take (batch,
features), convolutional layers (batch, channels, length).  Train-mode
forward passes cache what backward needs; inference-mode passes cache
nothing and never mutate state.  Convolutions use no padding, so the output
length is floor((N - m) / stride) + 1.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from ..errors import NoCachedForward, ShapeMismatch


def _rng(rng: Optional[np.random.Generator]) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(0)


class Layer:
    """Common interface; subclasses fill ``params`` / ``buffers`` / ``grads``."""

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec_line(self) -> str:
        raise NotImplementedError

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Shape (without batch axis) this layer produces for ``in_shape``."""
        return in_shape

    def _need_cache(self):
        if self._cache is None:
            raise NoCachedForward(f"{type(self).__name__}: backward without a train-mode forward")
        return self._cache


class Dense(Layer):
    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        rng: Optional[np.random.Generator] = None,
        dtype=np.float32,
    ) -> None:
        super().__init__()
        if in_dim < 1 or out_dim < 1:
            raise ShapeMismatch("dense dimensions must be positive")
        self.in_dim = in_dim
        self.out_dim = out_dim
        limit = 1.0 / math.sqrt(in_dim)
        weight = _rng(rng).uniform(-limit, limit, size=(in_dim, out_dim))
        self.params = {
            "weight": weight.astype(dtype),
            "bias": np.zeros(out_dim, dtype=dtype),
        }

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatch(f"dense expects (batch, {self.in_dim}), got {x.shape}")
        self._cache = x if train else None
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x = self._need_cache()
        self.grads = {"weight": x.T @ grad, "bias": grad.sum(axis=0)}
        return grad @ self.params["weight"].T

    def spec_line(self) -> str:
        return f"dense in={self.in_dim} out={self.out_dim}"

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.in_dim:
            raise ShapeMismatch(f"dense expects ({self.in_dim},), got {in_shape}")
        return (self.out_dim,)


class Conv1D(Layer):
    """Valid 1-D convolution with one bias per filter.

    The accumulation order is fixed: bias first, then input channels in
    order, then filter taps in order.  This keeps the forward pass exactly
    reproducible against a naive nested-loop evaluation.
    """

    def __init__(
        self,
        in_channels: int,
        filters: int,
        size: int,
        stride: int = 1,
        rng: Optional[np.random.Generator] = None,
        dtype=np.float32,
    ) -> None:
        super().__init__()
        if size < 1 or stride < 1 or filters < 1 or in_channels < 1:
            raise ShapeMismatch("conv1d sizes, strides and counts must be positive")
        self.in_channels = in_channels
        self.filters = filters
        self.size = size
        self.stride = stride
        limit = 1.0 / math.sqrt(in_channels * size)
        weight = _rng(rng).uniform(-limit, limit, size=(filters, in_channels, size))
        self.params = {
            "weight": weight.astype(dtype),
            "bias": np.zeros(filters, dtype=dtype),
        }

    def _out_len(self, n: int) -> int:
        if n < self.size:
            raise ShapeMismatch(f"conv1d: input length {n} shorter than filter {self.size}")
        return (n - self.size) // self.stride + 1

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(
                f"conv1d expects (batch, {self.in_channels}, length), got {x.shape}"
            )
        batch, _, n = x.shape
        out_len = self._out_len(n)
        weight, bias = self.params["weight"], self.params["bias"]
        out = np.empty((batch, self.filters, out_len), dtype=np.result_type(x, weight))
        out[:] = bias[None, :, None]
        term = np.empty_like(out)
        for k in range(self.in_channels):
            for a in range(self.size):
                taps = x[:, k, a : a + self.stride * (out_len - 1) + 1 : self.stride]
                np.multiply(taps[:, None, :], weight[None, :, k, a, None], out=term)
                out += term
        self._cache = x if train else None
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x = self._need_cache()
        weight = self.params["weight"]
        out_len = grad.shape[2]
        d_weight = np.zeros_like(weight)
        d_input = np.zeros_like(x)
        for k in range(self.in_channels):
            for a in range(self.size):
                sl = slice(a, a + self.stride * (out_len - 1) + 1, self.stride)
                taps = x[:, k, sl]
                d_weight[:, k, a] = np.tensordot(grad, taps, axes=([0, 2], [0, 1]))
                d_input[:, k, sl] += np.tensordot(grad, weight[:, k, a], axes=([1], [0]))
        self.grads = {"weight": d_weight, "bias": grad.sum(axis=(0, 2))}
        return d_input

    def spec_line(self) -> str:
        return (
            f"conv1d in={self.in_channels} filters={self.filters} "
            f"size={self.size} stride={self.stride}"
        )

    def out_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[0] != self.in_channels:
            raise ShapeMismatch(f"conv1d expects ({self.in_channels}, n), got {in_shape}")
        return (self.filters, self._out_len(in_shape[1]))


class MaxPool1D(Layer):
    def __init__(self, size: int, stride: int) -> None:
        super().__init__()
        if size < 1 or stride < 1:
            raise ShapeMismatch("maxpool1d size and stride must be positive")
        self.size = size
        self.stride = stride

    def _out_len(self, n: int) -> int:
        if n < self.size:
            raise ShapeMismatch(f"maxpool1d: input length {n} shorter than window {self.size}")
        return (n - self.size) // self.stride + 1

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 3:
            raise ShapeMismatch(f"maxpool1d expects (batch, channels, length), got {x.shape}")
        out_len = self._out_len(x.shape[2])
        windows = np.lib.stride_tricks.sliding_window_view(x, self.size, axis=2)
        windows = windows[:, :, :: self.stride, :][:, :, :out_len, :]
        argmax = windows.argmax(axis=3)  # first maximum wins on ties
        out = np.take_along_axis(windows, argmax[..., None], axis=3)[..., 0]
        if train:
            self._cache = (x.shape, argmax)
        else:
            self._cache = None
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        in_shape, argmax = self._need_cache()
        batch, channels, out_len = grad.shape
        d_input = np.zeros(in_shape, dtype=grad.dtype)
        b_idx, c_idx, w_idx = np.indices((batch, channels, out_len))
        positions = w_idx * self.stride + argmax
        np.add.at(d_input, (b_idx, c_idx, positions), grad)
        return d_input

    def spec_line(self) -> str:
        return f"maxpool1d size={self.size} stride={self.stride}"

    def out_shape(self, in_shape):
        if len(in_shape) != 2:
            raise ShapeMismatch(f"maxpool1d expects (channels, n), got {in_shape}")
        return (in_shape[0], self._out_len(in_shape[1]))


class ReLU(Layer):
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._cache = (x > 0) if train else None
        return np.maximum(x, 0)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        mask = self._need_cache()
        return grad * mask

    def spec_line(self) -> str:
        return "relu"


class Dropout(Layer):
    """Inverted dropout: zero with probability ``rate``, scale survivors."""

    def __init__(self, rate: float, rng: Optional[np.random.Generator] = None) -> None:
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ShapeMismatch(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = _rng(rng)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if not train or self.rate == 0.0:
            self._cache = None if not train else np.ones((), dtype=x.dtype)
            return x if not train else x.copy()
        mask = (self.rng.random(x.shape) >= self.rate).astype(x.dtype) / (1.0 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, grad: np.ndarray) -> np.ndarray:
        mask = self._need_cache()
        return grad * mask

    def spec_line(self) -> str:
        return f"dropout rate={self.rate!r}"


class BatchNorm1D(Layer):
    """Per-channel batch normalization with running statistics for inference.

    Accepts (batch, channels) and (batch, channels, length) inputs; batch
    statistics are accumulated in float64.
    """

    def __init__(self, channels: int, momentum: float = 0.99, eps: float = 1e-5) -> None:
        super().__init__()
        if channels < 1:
            raise ShapeMismatch("batchnorm1d needs at least one channel")
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.params = {
            "gamma": np.ones(channels, dtype=np.float32),
            "beta": np.zeros(channels, dtype=np.float32),
        }
        self.buffers = {
            "running_mean": np.zeros(channels, dtype=np.float32),
            "running_var": np.ones(channels, dtype=np.float32),
        }

    def _axes_and_shape(self, x: np.ndarray):
        if x.ndim == 2:
            if x.shape[1] != self.channels:
                raise ShapeMismatch(f"batchnorm1d expects {self.channels} channels, got {x.shape}")
            return (0,), (1, self.channels)
        if x.ndim == 3:
            if x.shape[1] != self.channels:
                raise ShapeMismatch(f"batchnorm1d expects {self.channels} channels, got {x.shape}")
            return (0, 2), (1, self.channels, 1)
        raise ShapeMismatch(f"batchnorm1d expects 2-D or 3-D input, got {x.shape}")

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        axes, shape = self._axes_and_shape(x)
        gamma = self.params["gamma"].reshape(shape)
        beta = self.params["beta"].reshape(shape)
        if train:
            mean = x.mean(axis=axes, dtype=np.float64)
            var = x.var(axis=axes, dtype=np.float64)
            m = self.momentum
            self.buffers["running_mean"] = (
                m * self.buffers["running_mean"] + (1.0 - m) * mean
            ).astype(self.buffers["running_mean"].dtype)
            self.buffers["running_var"] = (
                m * self.buffers["running_var"] + (1.0 - m) * var
            ).astype(self.buffers["running_var"].dtype)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            x_hat = (x - mean.reshape(shape).astype(x.dtype)) * inv_std.reshape(shape).astype(
                x.dtype
            )
            self._cache = (x_hat, inv_std.astype(x.dtype), axes, shape)
            return gamma * x_hat + beta
        mean = self.buffers["running_mean"].reshape(shape)
        inv_std = 1.0 / np.sqrt(self.buffers["running_var"].reshape(shape) + self.eps)
        self._cache = None
        return gamma * ((x - mean) * inv_std) + beta

    def backward(self, grad: np.ndarray) -> np.ndarray:
        x_hat, inv_std, axes, shape = self._need_cache()
        count = int(np.prod([grad.shape[a] for a in axes]))
        d_beta = grad.sum(axis=axes)
        d_gamma = (grad * x_hat).sum(axis=axes)
        self.grads = {"gamma": d_gamma, "beta": d_beta}
        gamma = self.params["gamma"].reshape(shape)
        scale = gamma * inv_std.reshape(shape) / count
        return scale * (
            count * grad - d_beta.reshape(shape) - x_hat * d_gamma.reshape(shape)
        )

    def spec_line(self) -> str:
        return f"batchnorm1d channels={self.channels}"


class Softmax(Layer):
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 2:
            raise ShapeMismatch(f"softmax expects (batch, classes), got {x.shape}")
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        self._cache = p if train else None
        return p

    def backward(self, grad: np.ndarray) -> np.ndarray:
        p = self._need_cache()
        inner = (grad * p).sum(axis=1, keepdims=True)
        return p * (grad - inner)

    def spec_line(self) -> str:
        return "softmax"


class Flatten(Layer):
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._cache = x.shape if train else None
        return x.reshape(x.shape[0], -1)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        shape = self._need_cache()
        return grad.reshape(shape)

    def spec_line(self) -> str:
        return "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)
