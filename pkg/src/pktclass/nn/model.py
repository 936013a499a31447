"""Model container: an ordered layer stack with persistence.

File format (little-endian): magic "DPMD", u16 version, u32-length-prefixed
architecture text (one layer per line plus the class-name table), u32
parameter-record count, records of (u16-prefixed name, u8 ndim, u32 dims,
raw float32 data), trailing CRC64.  Batch-norm running statistics are stored
alongside trainable parameters; the train/infer mode is never persisted.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from ..binio import Reader, Writer, check_trailer
from ..errors import (
    FormatVersionMismatch,
    NonFiniteActivation,
    ShapeMismatch,
    ToolkitError,
)
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

MAGIC = b"DPMD"
FORMAT_VERSION = 1


class Model:
    def __init__(self, layers: list[Layer], class_names: Optional[list[str]] = None) -> None:
        self.layers = layers
        self.class_names = list(class_names) if class_names is not None else None

    def forward(self, x: np.ndarray, train: bool = False, check_finite: bool = True) -> np.ndarray:
        if self.layers and isinstance(self.layers[0], Conv1D) and x.ndim == 2:
            x = x[:, None, :]
        for layer in self.layers:
            x = layer.forward(x, train=train)
        if check_finite and not np.isfinite(x).all():
            raise NonFiniteActivation("non-finite values in network output")
        return x

    def backward(self, grad: np.ndarray, start: Optional[int] = None) -> np.ndarray:
        """Backpropagate from layer ``start`` (default: the last) down to the input."""
        if start is None:
            start = len(self.layers) - 1
        for layer in reversed(self.layers[: start + 1]):
            grad = layer.backward(grad)
        return grad

    # -- parameter access ---------------------------------------------------

    def named_parameters(self) -> list[tuple[str, Layer, str]]:
        out = []
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                out.append((f"{i}.{name}", layer, name))
        return out

    def parameter_arrays(self) -> list[np.ndarray]:
        return [layer.params[name] for _, layer, name in self.named_parameters()]

    def gradient_arrays(self) -> list[np.ndarray]:
        grads = []
        for key, layer, name in self.named_parameters():
            if name not in layer.grads:
                raise ToolkitError(f"no gradient recorded for {key}")
            grads.append(layer.grads[name])
        return grads

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameter_arrays())

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Trainable parameters plus persistent buffers, in a stable order."""
        out = []
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                out.append((f"{i}.{name}", arr))
            for name, arr in layer.buffers.items():
                out.append((f"{i}.{name}", arr))
        return out

    def snapshot(self) -> list[np.ndarray]:
        return [arr.copy() for _, arr in self.state_arrays()]

    def restore(self, snapshot: list[np.ndarray]) -> None:
        arrays = self.state_arrays()
        if len(snapshot) != len(arrays):
            raise ShapeMismatch("snapshot does not match model state")
        for (_, arr), saved in zip(arrays, snapshot):
            arr[...] = saved

    def seed_dropout(self, seed: int) -> None:
        """Give every dropout layer an independent, reproducible stream."""
        dropouts = [l for l in self.layers if isinstance(l, Dropout)]
        if not dropouts:
            return
        for layer, child in zip(dropouts, np.random.SeedSequence(seed).spawn(len(dropouts))):
            layer.rng = np.random.default_rng(child)

    # -- serialization ------------------------------------------------------

    def architecture_text(self) -> str:
        lines = [f"layers {len(self.layers)}"]
        lines += [layer.spec_line() for layer in self.layers]
        classes = self.class_names or []
        lines.append(f"classes {len(classes)}")
        lines += classes
        return "\n".join(lines) + "\n"


def parse_architecture(text: str) -> Model:
    lines = text.splitlines()
    pos = 0

    def take() -> str:
        nonlocal pos
        if pos >= len(lines):
            raise FormatVersionMismatch("architecture text ends early")
        line = lines[pos]
        pos += 1
        return line

    head = take().split()
    if len(head) != 2 or head[0] != "layers":
        raise FormatVersionMismatch("architecture text must start with 'layers N'")
    n_layers = int(head[1])
    layers: list[Layer] = []
    for _ in range(n_layers):
        tokens = take().split()
        kind, kv = tokens[0], dict(t.split("=", 1) for t in tokens[1:])
        if kind == "dense":
            layers.append(Dense(int(kv["in"]), int(kv["out"])))
        elif kind == "conv1d":
            layers.append(
                Conv1D(int(kv["in"]), int(kv["filters"]), int(kv["size"]), int(kv["stride"]))
            )
        elif kind == "maxpool1d":
            layers.append(MaxPool1D(int(kv["size"]), int(kv["stride"])))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "dropout":
            layers.append(Dropout(float(kv["rate"])))
        elif kind == "batchnorm1d":
            layers.append(BatchNorm1D(int(kv["channels"])))
        elif kind == "softmax":
            layers.append(Softmax())
        elif kind == "flatten":
            layers.append(Flatten())
        else:
            raise FormatVersionMismatch(f"unknown layer kind {kind!r}")
    head = take().split()
    if len(head) != 2 or head[0] != "classes":
        raise FormatVersionMismatch("architecture text missing the class table")
    n_classes = int(head[1])
    classes = [take() for _ in range(n_classes)] or None
    return Model(layers, class_names=classes)


def save_model(model: Model, path: str | Path) -> None:
    writer = Writer()
    writer.raw(MAGIC)
    writer.u16(FORMAT_VERSION)
    writer.str32(model.architecture_text())
    state = model.state_arrays()
    writer.u32(len(state))
    for name, arr in state:
        writer.str16(name)
        data = np.ascontiguousarray(arr, dtype="<f4")
        writer.u8(data.ndim)
        for dim in data.shape:
            writer.u32(dim)
        writer.raw(data.tobytes())
    Path(path).write_bytes(writer.finish())


def load_model(path: str | Path) -> Model:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatVersionMismatch(f"{path}: not a model file (bad magic)")
    body = check_trailer(data, what=str(path))
    reader = Reader(body, what=str(path))
    reader.raw(4)
    version = reader.u16()
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    model = parse_architecture(reader.str32())
    targets = dict(model.state_arrays())
    n_records = reader.u32()
    seen = set()
    for _ in range(n_records):
        name = reader.str16()
        ndim = reader.u8()
        shape = tuple(reader.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(reader.raw(count * 4), dtype="<f4").reshape(shape)
        if name not in targets:
            raise FormatVersionMismatch(f"{path}: unexpected parameter {name!r}")
        if targets[name].shape != arr.shape:
            raise ShapeMismatch(
                f"{path}: parameter {name!r} has shape {arr.shape}, expected {targets[name].shape}"
            )
        targets[name][...] = arr
        seen.add(name)
    missing = set(targets) - seen
    if missing:
        raise FormatVersionMismatch(f"{path}: missing parameters {sorted(missing)}")
    return model
