"""Training loops: supervised fine-tuning, greedy layer-wise autoencoder
pretraining, early stopping and the convolution hyperparameter grid search.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .dataset import SplitDataset
from .errors import ConfigError, EmptySplit, ToolkitError
from .models import CNNConfig, ConvSpec, SAEConfig, build_cnn
from .nn.adam import Adam
from .nn.layers import Dense, Dropout, ReLU
from .nn.losses import cross_entropy_loss, mse_loss
from .nn.model import Model
from .seeds import derive_seed

LogCallback = Callable[[dict], None]


@dataclass
class TrainSettings:
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10
    min_delta: float = 1e-4


@dataclass
class TrainRun:
    config: object
    seed: int
    history: list[dict] = field(default_factory=list)
    stop_epoch: int = 0
    best_validation_loss: float = math.inf
    wall_time: float = 0.0


class EarlyStopper:
    """Stop after ``patience`` consecutive epochs without a >= min_delta improvement."""

    def __init__(self, patience: int, min_delta: float) -> None:
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = 0
        self._stale = 0

    def update(self, loss: float, epoch: int) -> tuple[bool, bool]:
        """Returns (improved, should_stop)."""
        if loss < self.best - self.min_delta:
            self.best = loss
            self.best_epoch = epoch
            self._stale = 0
            return True, False
        self._stale += 1
        return False, self._stale >= self.patience


def _batches(n: int, batch_size: int, perm: np.ndarray):
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _evaluate_loss(model: Model, x: np.ndarray, target, loss_kind: str, batch_size: int) -> float:
    total = 0.0
    for start in range(0, len(x), batch_size):
        xb = x[start : start + batch_size]
        out = model.forward(xb, train=False)
        if loss_kind == "ce":
            loss, _ = cross_entropy_loss(out, target[start : start + batch_size])
        else:
            loss, _ = mse_loss(out, target[start : start + batch_size])
        total += loss * len(xb)
    return total / len(x)


def fit(
    model: Model,
    x: np.ndarray,
    target,
    *,
    loss_kind: str,
    epochs: int,
    settings: Optional[TrainSettings] = None,
    seed: int,
    val: Optional[tuple[np.ndarray, object]] = None,
    purpose: str = "train",
    log_cb: Optional[LogCallback] = None,
    config: object = None,
) -> TrainRun:
    """Mini-batch Adam training with early stopping on the validation loss.

    With no validation data the training loss is monitored instead.  The
    parameters achieving the best monitored loss are restored on exit.
    """
    settings = settings if settings is not None else TrainSettings()
    if len(x) == 0:
        raise EmptySplit("no training samples")
    if loss_kind == "ce":
        fused_start = len(model.layers) - 2  # gradient already includes the softmax
    else:
        fused_start = len(model.layers) - 1
    started = time.perf_counter()
    run = TrainRun(config=config, seed=seed)
    if epochs <= 0:
        return run

    shuffle_rng = np.random.default_rng(derive_seed(seed, f"{purpose}-shuffle"))
    model.seed_dropout(derive_seed(seed, f"{purpose}-dropout"))
    adam = Adam(
        model.parameter_arrays(),
        lr=settings.learning_rate,
        beta1=settings.beta1,
        beta2=settings.beta2,
        eps=settings.eps,
    )
    stopper = EarlyStopper(settings.patience, settings.min_delta)
    best_state: Optional[list[np.ndarray]] = None
    target_arr = np.asarray(target)

    for epoch in range(1, epochs + 1):
        perm = shuffle_rng.permutation(len(x))
        total = 0.0
        for batch_idx in _batches(len(x), settings.batch_size, perm):
            xb = x[batch_idx]
            out = model.forward(xb, train=True)
            if loss_kind == "ce":
                loss, grad = cross_entropy_loss(out, target_arr[batch_idx])
            else:
                loss, grad = mse_loss(out, target_arr[batch_idx])
            model.backward(grad, start=fused_start)
            adam.step(model.gradient_arrays())
            total += loss * len(xb)
        train_loss = total / len(x)
        if val is not None and len(val[0]):
            monitored = _evaluate_loss(model, val[0], val[1], loss_kind, settings.batch_size)
            val_loss: Optional[float] = monitored
        else:
            monitored = train_loss
            val_loss = None
        run.history.append(
            {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss}
        )
        improved, stop = stopper.update(monitored, epoch)
        if improved:
            best_state = model.snapshot()
        if log_cb is not None:
            log_cb(
                {
                    "event": "epoch",
                    "purpose": purpose,
                    "epoch": epoch,
                    "train_loss": round(train_loss, 6),
                    "val_loss": None if val_loss is None else round(val_loss, 6),
                }
            )
        run.stop_epoch = epoch
        if stop:
            break

    if best_state is not None:
        model.restore(best_state)
    run.best_validation_loss = stopper.best
    run.wall_time = time.perf_counter() - started
    return run


def finetune(
    model: Model,
    split: SplitDataset,
    cfg,
    settings: Optional[TrainSettings] = None,
    seed: int = 0,
    log_cb: Optional[LogCallback] = None,
) -> TrainRun:
    """Supervised training of the whole network with categorical cross entropy."""
    settings = settings if settings is not None else TrainSettings()
    if len(split.train) == 0 or len(split.validation) == 0:
        raise EmptySplit("finetune needs non-empty train and validation sets")
    epochs = cfg.finetune_epochs if isinstance(cfg, SAEConfig) else cfg.epochs
    return fit(
        model,
        split.train.inputs(),
        split.train.labels,
        loss_kind="ce",
        epochs=epochs,
        settings=settings,
        seed=seed,
        val=(split.validation.inputs(), split.validation.labels),
        purpose="finetune",
        log_cb=log_cb,
        config=cfg,
    )


def encoder_block_starts(model: Model) -> list[int]:
    """Indices of the dense layers that start each encoder block (classifier excluded)."""
    dense_indices = [i for i, layer in enumerate(model.layers) if isinstance(layer, Dense)]
    return dense_indices[:-1]


def block_activations(model: Model, block_start: int, inputs: np.ndarray) -> np.ndarray:
    """Deterministic output of one encoder block (dense + ReLU, dropout off)."""
    return Model(model.layers[block_start : block_start + 2]).forward(inputs, train=False)


def pretrain_block(
    model: Model,
    block_start: int,
    inputs: np.ndarray,
    cfg: SAEConfig,
    settings: Optional[TrainSettings] = None,
    seed: int = 0,
    stage: int = 0,
    val_inputs: Optional[np.ndarray] = None,
    log_cb: Optional[LogCallback] = None,
) -> TrainRun:
    """Train one encoder layer as an autoencoder over its own inputs.

    A transient, untied decoder mirrors the layer; only this layer and the
    decoder receive updates, and the decoder is discarded afterwards.
    """
    settings = settings if settings is not None else TrainSettings()
    encoder: Dense = model.layers[block_start]  # type: ignore[assignment]
    decoder = Dense(
        encoder.out_dim,
        encoder.in_dim,
        rng=np.random.default_rng(derive_seed(seed, f"pretrain-decoder-{stage}")),
        dtype=encoder.params["weight"].dtype,
    )
    auto = Model([encoder, ReLU(), Dropout(cfg.dropout_rate), decoder])
    return fit(
        auto,
        inputs,
        inputs,
        loss_kind="mse",
        epochs=cfg.pretrain_epochs,
        settings=settings,
        seed=derive_seed(seed, f"pretrain-{stage}"),
        val=None if val_inputs is None else (val_inputs, val_inputs),
        purpose=f"pretrain-layer{stage}",
        log_cb=log_cb,
        config=cfg,
    )


def pretrain_sae(
    model: Model,
    train_vectors: np.ndarray,
    cfg: SAEConfig,
    settings: Optional[TrainSettings] = None,
    seed: int = 0,
    val_vectors: Optional[np.ndarray] = None,
    log_cb: Optional[LogCallback] = None,
) -> list[TrainRun]:
    """Greedy layer-wise pretraining of the encoder stack.

    Each encoder layer in turn reconstructs its own input; earlier layers
    stay frozen because they are simply not part of the stage's temporary
    autoencoder.  Per-stage seeds are derived independently, so a stage's
    trajectory does not depend on how many stages follow it.
    """
    settings = settings if settings is not None else TrainSettings()
    runs: list[TrainRun] = []
    if cfg.pretrain_epochs <= 0 or len(train_vectors) == 0:
        return runs
    hidden = np.asarray(train_vectors, dtype=np.float32)
    hidden_val = None if val_vectors is None else np.asarray(val_vectors, dtype=np.float32)
    for stage, start in enumerate(encoder_block_starts(model)):
        runs.append(
            pretrain_block(
                model,
                start,
                hidden,
                cfg,
                settings=settings,
                seed=seed,
                stage=stage,
                val_inputs=hidden_val,
                log_cb=log_cb,
            )
        )
        hidden = block_activations(model, start, hidden)
        if hidden_val is not None:
            hidden_val = block_activations(model, start, hidden_val)
    return runs


@dataclass
class GridSpec:
    c1_sizes: tuple[int, ...]
    c1_counts: tuple[int, ...]
    c1_strides: tuple[int, ...]
    c2_sizes: tuple[int, ...]
    c2_counts: tuple[int, ...]
    c2_strides: tuple[int, ...]
    objective: str = "validation"  # or "test"

    def size(self) -> int:
        return (
            len(self.c1_sizes)
            * len(self.c1_counts)
            * len(self.c1_strides)
            * len(self.c2_sizes)
            * len(self.c2_counts)
            * len(self.c2_strides)
        )

    def configs(self, base: CNNConfig):
        for s1, n1, t1, s2, n2, t2 in itertools.product(
            self.c1_sizes,
            self.c1_counts,
            self.c1_strides,
            self.c2_sizes,
            self.c2_counts,
            self.c2_strides,
        ):
            yield replace(base, c1=ConvSpec(s1, n1, t1), c2=ConvSpec(s2, n2, t2))


@dataclass
class GridEntry:
    rank: int
    config: CNNConfig
    objective: Optional[float]
    params: int
    stop_epoch: int
    error: Optional[str] = None


def grid_search(
    grid: GridSpec,
    split: SplitDataset,
    base_cfg: CNNConfig,
    settings: Optional[TrainSettings] = None,
    seed: int = 0,
    log_cb: Optional[LogCallback] = None,
) -> list[GridEntry]:
    """Train every configuration with an identical seed and budget, then rank
    by weighted F1 on the chosen evaluation split (failures rank last)."""
    from .evaluation import confusion, metrics  # local import to avoid a cycle

    settings = settings if settings is not None else TrainSettings()
    if grid.size() == 0:
        raise ConfigError("empty grid")
    if log_cb is not None:
        log_cb({"event": "grid", "configurations": grid.size(), "objective": grid.objective})
    eval_ds = split.test if grid.objective == "test" else split.validation
    entries: list[GridEntry] = []
    for cfg in grid.configs(base_cfg):
        try:
            model = build_cnn(cfg, seed=seed, class_names=split.train.classes)
            run = finetune(model, split, cfg, settings=settings, seed=seed, log_cb=log_cb)
            report = metrics(confusion(model, eval_ds))
            entries.append(
                GridEntry(
                    rank=0,
                    config=cfg,
                    objective=report.weighted_f1,
                    params=model.parameter_count(),
                    stop_epoch=run.stop_epoch,
                )
            )
        except ToolkitError as exc:
            entries.append(
                GridEntry(
                    rank=0,
                    config=cfg,
                    objective=None,
                    params=0,
                    stop_epoch=0,
                    error=f"{type(exc).__name__}: {exc}",
                )
            )
            if log_cb is not None:
                log_cb({"event": "grid-failure", "error": str(exc)})
    entries.sort(key=lambda e: (e.objective is None, -(e.objective or 0.0)))
    for rank, entry in enumerate(entries, start=1):
        entry.rank = rank
    return entries


LEADERBOARD_HEADER = (
    "rank,objective,params,c1_size,c1_count,c1_stride,c2_size,c2_count,c2_stride,stop_epoch"
)


def leaderboard_csv(entries: list[GridEntry]) -> str:
    lines = [LEADERBOARD_HEADER]
    for e in entries:
        objective = f"{e.objective:.6f}" if e.objective is not None else f"error:{e.error}"
        lines.append(
            f"{e.rank},{objective},{e.params},{e.config.c1.size},{e.config.c1.count},"
            f"{e.config.c1.stride},{e.config.c2.size},{e.config.c2.count},"
            f"{e.config.c2.stride},{e.stop_epoch}"
        )
    return "\n".join(lines) + "\n"


# -- flat key=value training configuration files ----------------------------

_INT_KEYS = {
    "batch_size",
    "patience",
    "pretrain_epochs",
    "finetune_epochs",
    "epochs",
    "c1_size",
    "c1_count",
    "c1_stride",
    "c2_size",
    "c2_count",
    "c2_stride",
    "pool_size",
    "pool_stride",
}
_FLOAT_KEYS = {"learning_rate", "beta1", "beta2", "eps", "min_delta", "dropout_rate"}
_LIST_KEYS = {"encoder_sizes", "fc_sizes"}


def parse_train_config(text: str) -> dict:
    """Parse ``key = value`` lines into typed values ('#' starts a comment)."""
    values: dict = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {number}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key in _LIST_KEYS:
                values[key] = tuple(int(v) for v in value.split(",") if v.strip())
            else:
                raise ConfigError(f"config line {number}: unknown key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"config line {number}: bad value for {key!r}: {value!r}") from exc
    return values


def apply_config(values: dict, sae: SAEConfig, cnn: CNNConfig, settings: TrainSettings):
    """Overlay parsed config values onto the three config objects."""
    for key in ("batch_size", "learning_rate", "beta1", "beta2", "eps", "patience", "min_delta"):
        if key in values:
            setattr(settings, key, values[key])
    for key in ("encoder_sizes", "dropout_rate", "pretrain_epochs", "finetune_epochs"):
        if key in values:
            setattr(sae, key, values[key])
    if "dropout_rate" in values:
        cnn.dropout_rate = values["dropout_rate"]
    if "epochs" in values:
        cnn.epochs = values["epochs"]
    if "fc_sizes" in values:
        cnn.fc_sizes = values["fc_sizes"]
    c1 = {f: getattr(cnn.c1, f) for f in ("size", "count", "stride")}
    c2 = {f: getattr(cnn.c2, f) for f in ("size", "count", "stride")}
    pool = {"size": cnn.pool.size, "stride": cnn.pool.stride}
    for f in ("size", "count", "stride"):
        if f"c1_{f}" in values:
            c1[f] = values[f"c1_{f}"]
        if f"c2_{f}" in values:
            c2[f] = values[f"c2_{f}"]
    for f in ("size", "stride"):
        if f"pool_{f}" in values:
            pool[f] = values[f"pool_{f}"]
    cnn.c1 = ConvSpec(**c1)
    cnn.c2 = ConvSpec(**c2)
    cnn.pool = type(cnn.pool)(**pool)
    return sae, cnn, settings
