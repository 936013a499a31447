from __future__ import annotations

import numpy as np
import pytest

from pktclass import dataset as ds_mod
from pktclass.dataset import LabeledDataset, split
from pktclass.errors import ConfigError, EmptySplit
from pktclass.models import CNNConfig, ConvSpec, SAEConfig, build_cnn, build_sae
from pktclass.training import (
    EarlyStopper,
    GridSpec,
    TrainSettings,
    apply_config,
    block_activations,
    encoder_block_starts,
    finetune,
    fit,
    grid_search,
    leaderboard_csv,
    parse_train_config,
    pretrain_block,
    pretrain_sae,
)


from corpus import separable_dataset


def tiny_sae_cfg(**kw) -> SAEConfig:
    defaults = dict(
        encoder_sizes=(32, 16), n_classes=2, pretrain_epochs=2, finetune_epochs=30
    )
    defaults.update(kw)
    return SAEConfig(**defaults)


def tiny_cnn_cfg(**kw) -> CNNConfig:
    defaults = dict(
        c1=ConvSpec(4, 4, 3),
        c2=ConvSpec(5, 4, 2),
        fc_sizes=(16, 8),
        n_classes=2,
        epochs=25,
    )
    defaults.update(kw)
    return CNNConfig(**defaults)


def settings(**kw) -> TrainSettings:
    defaults = dict(batch_size=32, patience=6, learning_rate=1e-3)
    defaults.update(kw)
    return TrainSettings(**defaults)


# -- early stopping -----------------------------------------------------------


def test_early_stopper_plateau_stops_within_patience():
    stopper = EarlyStopper(patience=5, min_delta=1e-4)
    losses = [1.0, 0.8, 0.6, 0.5] + [0.5] * 20  # plateau after epoch 4
    stopped_at = None
    for epoch, loss in enumerate(losses, start=1):
        _, stop = stopper.update(loss, epoch)
        if stop:
            stopped_at = epoch
            break
    assert stopped_at == 9  # 4 + patience
    assert stopper.best == 0.5 and stopper.best_epoch == 4


def test_early_stopper_improvement_resets_counter():
    stopper = EarlyStopper(patience=3, min_delta=0.0)
    for epoch, loss in enumerate([1.0, 0.9, 0.95, 0.95, 0.85, 0.95, 0.95], start=1):
        _, stop = stopper.update(loss, epoch)
        assert not stop
    assert stopper.best == 0.85


def test_early_stopper_min_delta_filters_noise():
    stopper = EarlyStopper(patience=2, min_delta=0.1)
    stopper.update(1.0, 1)
    _, stop1 = stopper.update(0.95, 2)  # below min_delta: no improvement
    _, stop2 = stopper.update(0.92, 3)
    assert not stop1 and stop2


# -- fit ----------------------------------------------------------------------


def test_fit_restores_best_parameters():
    ds = separable_dataset(40)
    parts = split(ds, seed=0)
    model = build_sae(tiny_sae_cfg(), seed=0, class_names=ds.classes)
    run = finetune(model, parts, tiny_sae_cfg(finetune_epochs=15), settings(), seed=0)
    recorded_best = min(h["val_loss"] for h in run.history)
    assert run.best_validation_loss == pytest.approx(recorded_best)
    from pktclass.training import _evaluate_loss

    final_val = _evaluate_loss(
        model, parts.validation.inputs(), parts.validation.labels, "ce", 64
    )
    assert final_val <= recorded_best + 1e-9


def test_fit_zero_epochs_is_a_noop():
    ds = separable_dataset(10)
    model = build_sae(tiny_sae_cfg(), seed=0, class_names=ds.classes)
    before = model.snapshot()
    run = fit(
        model,
        ds.inputs(),
        ds.labels,
        loss_kind="ce",
        epochs=0,
        settings=settings(),
        seed=0,
    )
    assert run.history == []
    for (name, arr), saved in zip(model.state_arrays(), before):
        assert np.array_equal(arr, saved), name


def test_finetune_empty_split_raises():
    ds = separable_dataset(2, seed=1)
    parts = split(ds, seed=0)
    parts.validation = parts.validation.subset(np.array([], dtype=int))
    with pytest.raises(EmptySplit):
        finetune(build_sae(tiny_sae_cfg(), seed=0), parts, tiny_sae_cfg(), settings(), seed=0)


def test_finetune_reaches_full_training_accuracy_on_separable_data():
    ds = separable_dataset(50)
    parts = split(ds, seed=3)
    model = build_sae(tiny_sae_cfg(finetune_epochs=50), seed=1, class_names=ds.classes)
    finetune(model, parts, tiny_sae_cfg(finetune_epochs=50), settings(), seed=1)
    probs = model.forward(parts.train.inputs())
    accuracy = (probs.argmax(axis=1) == parts.train.labels).mean()
    assert accuracy == 1.0


def test_fit_deterministic_across_runs():
    ds = separable_dataset(30)
    parts = split(ds, seed=2)

    def run_once():
        model = build_sae(tiny_sae_cfg(finetune_epochs=8), seed=9, class_names=ds.classes)
        run = finetune(model, parts, tiny_sae_cfg(finetune_epochs=8), settings(), seed=9)
        return model, run

    model_a, run_a = run_once()
    model_b, run_b = run_once()
    assert run_a.history == run_b.history
    for (name, arr_a), (_, arr_b) in zip(model_a.state_arrays(), model_b.state_arrays()):
        assert np.array_equal(arr_a, arr_b), name


# -- pretraining --------------------------------------------------------------


def test_pretrain_zero_epochs_leaves_model_unchanged():
    model = build_sae(tiny_sae_cfg(pretrain_epochs=0), seed=0)
    before = model.snapshot()
    runs = pretrain_sae(model, np.random.default_rng(0).random((20, 1500), dtype=np.float32),
                        tiny_sae_cfg(pretrain_epochs=0), settings(), seed=0)
    assert runs == []
    for (name, arr), saved in zip(model.state_arrays(), before):
        assert np.array_equal(arr, saved), name


def test_pretrain_stage_k_mutates_only_layer_k():
    cfg = tiny_sae_cfg(pretrain_epochs=2)
    model = build_sae(cfg, seed=4)
    x = np.random.default_rng(1).random((48, 1500), dtype=np.float32)
    starts = encoder_block_starts(model)
    assert len(starts) == 2
    pretrain_block(model, starts[0], x, cfg, settings(), seed=4, stage=0)
    layer0_after_stage0 = model.layers[starts[0]].params["weight"].copy()
    classifier_before = model.layers[-2].params["weight"].copy()
    hidden = block_activations(model, starts[0], x)
    pretrain_block(model, starts[1], hidden, cfg, settings(), seed=4, stage=1)
    assert np.array_equal(model.layers[starts[0]].params["weight"], layer0_after_stage0)
    assert np.array_equal(model.layers[-2].params["weight"], classifier_before)


def test_pretrain_mutates_every_encoder_layer():
    cfg = tiny_sae_cfg(pretrain_epochs=2)
    model = build_sae(cfg, seed=5)
    before = [model.layers[i].params["weight"].copy() for i in encoder_block_starts(model)]
    x = np.random.default_rng(2).random((32, 1500), dtype=np.float32)
    runs = pretrain_sae(model, x, cfg, settings(), seed=5)
    assert len(runs) == 2
    for start, saved in zip(encoder_block_starts(model), before):
        assert not np.array_equal(model.layers[start].params["weight"], saved)


def test_pretrain_reconstructs_low_rank_data():
    # data drawn from a rank-50 linear map: a 400-unit code layer can represent it
    rng = np.random.default_rng(3)
    latent = rng.random((384, 50))
    mix = rng.standard_normal((50, 1500)) / np.sqrt(50)
    x = (latent @ mix).astype(np.float32)
    cfg = SAEConfig(encoder_sizes=(400,), n_classes=2, pretrain_epochs=40, dropout_rate=0.0)
    model = build_sae(cfg, seed=6)
    [run] = pretrain_sae(
        model, x, cfg, settings(batch_size=64, learning_rate=3e-3, patience=10), seed=6
    )
    losses = [h["train_loss"] for h in run.history]
    assert losses[-1] < 0.10 * losses[0]
    # epoch-over-epoch trend decreases (small tolerance for minibatch noise)
    assert all(later < earlier * 1.05 for earlier, later in zip(losses, losses[1:]))


# -- grid search ----------------------------------------------------------------


def grid_split():
    ds = separable_dataset(40, seed=7)
    return split(ds, seed=7)


def test_grid_single_point_leaderboard():
    parts = grid_split()
    grid = GridSpec((4,), (4,), (3,), (5,), (4,), (2,))
    entries = grid_search(grid, parts, tiny_cnn_cfg(epochs=4), settings(), seed=0)
    assert len(entries) == 1
    assert entries[0].rank == 1
    assert entries[0].objective is not None


def test_grid_four_entries_sorted_descending():
    parts = grid_split()
    grid = GridSpec((4, 6), (4,), (3,), (5,), (4, 6), (2,))
    entries = grid_search(grid, parts, tiny_cnn_cfg(epochs=3), settings(), seed=0)
    assert len(entries) == 4
    scores = [e.objective for e in entries]
    assert scores == sorted(scores, reverse=True)
    csv_text = leaderboard_csv(entries)
    assert csv_text.splitlines()[0].startswith("rank,objective,params,")
    assert len(csv_text.strip().splitlines()) == 5


def test_grid_rerun_identical():
    parts = grid_split()
    grid = GridSpec((4,), (4,), (3,), (5, 6), (4,), (2,))
    first = grid_search(grid, parts, tiny_cnn_cfg(epochs=3), settings(), seed=1)
    second = grid_search(grid, parts, tiny_cnn_cfg(epochs=3), settings(), seed=1)
    assert leaderboard_csv(first) == leaderboard_csv(second)


def test_grid_failures_rank_last_with_reason():
    parts = grid_split()
    grid = GridSpec((4, 2000), (4,), (3,), (5,), (4,), (2,))  # 2000 cannot fit
    entries = grid_search(grid, parts, tiny_cnn_cfg(epochs=3), settings(), seed=0)
    assert len(entries) == 2
    assert entries[0].error is None
    assert entries[1].error is not None and "InvalidGeometry" in entries[1].error
    assert "error:InvalidGeometry" in leaderboard_csv(entries)


def test_grid_objective_test_split():
    parts = grid_split()
    grid = GridSpec((4,), (4,), (3,), (5,), (4,), (2,), objective="test")
    entries = grid_search(grid, parts, tiny_cnn_cfg(epochs=3), settings(), seed=0)
    assert entries[0].objective is not None


# -- config files ---------------------------------------------------------------


def test_parse_train_config_types():
    text = """
    # budget
    epochs = 12
    learning_rate = 0.01
    fc_sizes = 64,32,16
    c1_size = 6
    """
    values = parse_train_config(text)
    assert values == {
        "epochs": 12,
        "learning_rate": 0.01,
        "fc_sizes": (64, 32, 16),
        "c1_size": 6,
    }


def test_parse_train_config_rejects_unknown_keys_and_bad_values():
    with pytest.raises(ConfigError):
        parse_train_config("nope = 3\n")
    with pytest.raises(ConfigError):
        parse_train_config("epochs = many\n")
    with pytest.raises(ConfigError):
        parse_train_config("just a line\n")


def test_apply_config_overlays_everything():
    values = parse_train_config(
        "epochs = 7\nbatch_size = 16\nc1_size = 6\nc2_stride = 2\npool_size = 3\n"
        "encoder_sizes = 100,50\npretrain_epochs = 1\ndropout_rate = 0.2\n"
    )
    sae, cnn, tset = apply_config(values, SAEConfig(), CNNConfig(), TrainSettings())
    assert cnn.epochs == 7 and cnn.c1.size == 6 and cnn.c2.stride == 2
    assert cnn.pool.size == 3 and cnn.dropout_rate == 0.2
    assert sae.encoder_sizes == (100, 50) and sae.pretrain_epochs == 1
    assert tset.batch_size == 16
