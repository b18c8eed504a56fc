import math

import numpy as np
import pytest

from repcnn_kws import ConfigError, DivergenceError
from repcnn_kws.data import TRAIN, load_manifest
from repcnn_kws.model import build_repcnn
from repcnn_kws.nn import focal_loss_per_sample
from repcnn_kws.reparam import fuse_model
from repcnn_kws.train import (
    EpochWindows, LossCurve, TrainConfig, Trainer, WindowDataset, build_window_dataset, export_loss_curves,
    hard_negative_loss,
    iterate_batches, read_loss_curves, select_hard_negatives, train, validation_loss,
)


def tiny_config(**overrides):
    settings = dict(positives_per_batch=2, negatives_per_positive=3, top_k=2, epochs=2, seeds=[0], augment=None)
    settings.update(overrides)
    return TrainConfig(**settings)


def tiny_dataset(num_pos=6, num_neg=20, frames=17, seed=0):
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((num_pos + num_neg, 16, frames)).astype(np.float32)
    features[:num_pos, :, -5:] += 2.0
    labels = np.array([1] * num_pos + [0] * num_neg)
    return WindowDataset(features, labels)


def test_select_hard_negatives_ties_go_to_lower_index():
    assert select_hard_negatives([1.0, 3.0, 3.0, 2.0], 2).tolist() == [1, 2]
    assert select_hard_negatives([0.5, 0.5, 0.5], 2).tolist() == [0, 1]
    assert select_hard_negatives([1.0, 2.0], 5).tolist() == [1, 0]
    assert select_hard_negatives([1.0, 2.0], 0).tolist() == []
    with pytest.raises(ConfigError):
        select_hard_negatives([1.0], -1)


def test_hard_negative_loss_masks_easy_negatives(rng):
    logits = rng.standard_normal(10) * 2
    labels = np.array([1, 1, 0, 0, 0, 0, 0, 0, 0, 0])
    loss, grad, selected = hard_negative_loss(logits, labels, top_k=3)
    losses, grads = focal_loss_per_sample(logits, labels)
    hardest = 2 + np.argsort(-losses[2:], kind="stable")[:3]
    expected = np.zeros(10, dtype=bool)
    expected[[0, 1]] = True
    expected[hardest] = True
    np.testing.assert_array_equal(selected, expected)
    assert loss == pytest.approx(np.mean(losses[expected]))
    assert np.all(grad[~expected] == 0.0)
    np.testing.assert_allclose(grad[expected], grads[expected] / 5)


def test_hard_negative_loss_without_negatives_kept():
    loss, grad, selected = hard_negative_loss(np.array([0.3, -0.2]), np.array([0, 0]), top_k=0)
    assert loss == 0.0 and not selected.any() and not grad.any()


def test_batches_cover_every_positive_once():
    data = tiny_dataset(num_pos=5, num_neg=7)
    cfg = tiny_config(negatives_per_positive=2)
    batches = list(iterate_batches(data, cfg, np.random.default_rng(0)))
    assert [int(labels.sum()) for _, labels in batches] == [2, 2, 1]
    assert all(int((labels == 0).sum()) == 4 for _, labels in batches)
    seen = np.concatenate([features[labels == 1] for features, labels in batches])
    assert sorted(seen[:, 0, 0].tolist()) == sorted(data.features[:5, 0, 0].tolist())
    negatives = np.concatenate([features[labels == 0] for features, labels in batches])
    assert set(negatives[:, 0, 0].tolist()) == set(data.features[5:, 0, 0].tolist())


def test_batches_without_positives():
    data = tiny_dataset(num_pos=0, num_neg=10)
    batches = list(iterate_batches(data, tiny_config(negatives_per_positive=2), np.random.default_rng(0)))
    assert len(batches) == 3
    assert all(labels.sum() == 0 for _, labels in batches)


def test_training_is_deterministic(small_cfg, tmp_path):
    data = tiny_dataset()
    val = tiny_dataset(num_pos=3, num_neg=6, seed=1)
    paths = []
    for run in range(2):
        model, curve = train(build_repcnn(small_cfg, rng=0), data, tiny_config(), val, seed=4, progress=False)
        path = tmp_path / f"curve{run}.csv"
        export_loss_curves(curve, str(path))
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert curve.epochs(4) == 2
    assert not model.training


def test_training_reduces_loss(small_cfg):
    data = tiny_dataset(num_pos=8, num_neg=24)
    cfg = tiny_config(epochs=15, lr=0.01, top_k=6)
    model = build_repcnn(small_cfg, rng=0)
    before = validation_loss(model, data, cfg)
    _, curve = Trainer(cfg, progress=False).fit(model, data, data, seed=0)
    assert curve.final_val_loss() < before


def test_zero_learning_rate_freezes_parameters(small_cfg):
    model = build_repcnn(small_cfg, rng=0)
    before = {name: p.data.copy() for name, p in model.parameters().items()}
    train(model, tiny_dataset(), tiny_config(lr=0.0), progress=False)
    for name, param in model.parameters().items():
        np.testing.assert_array_equal(param.data, before[name])


def test_validation_every_other_epoch(small_cfg):
    _, curve = train(build_repcnn(small_cfg, rng=0), tiny_dataset(), tiny_config(epochs=4, val_every=2),
                     tiny_dataset(seed=2), progress=False)
    val = [v for _, v in curve.curves[0]]
    assert math.isnan(val[0]) and math.isnan(val[2])
    assert math.isfinite(val[1]) and math.isfinite(val[3])


def test_training_rejects_bad_input(small_cfg):
    trainer = Trainer(tiny_config(), progress=False)
    with pytest.raises(ConfigError):
        trainer.fit(build_repcnn(small_cfg, rng=0), WindowDataset.from_samples([]))
    with pytest.raises(ConfigError):
        trainer.fit(fuse_model(build_repcnn(small_cfg, rng=0)), tiny_dataset())


def test_non_finite_loss_raises_divergence(small_cfg):
    model = build_repcnn(small_cfg, rng=0)
    model.layers[0].weight.data[0, 0, 0] = np.nan
    with pytest.raises(DivergenceError):
        train(model, tiny_dataset(), tiny_config(), progress=False)


def test_parameter_overflow_raises_divergence(small_cfg):
    cfg = tiny_config(optimizer="sgd", lr=1e300, epochs=1)
    with pytest.raises(DivergenceError, match="parameter"):
        train(build_repcnn(small_cfg, rng=0), tiny_dataset(), cfg, progress=False)


def test_fit_requests_windows_for_every_epoch(small_cfg):
    requested = []

    def windows(epoch):
        requested.append(epoch)
        return tiny_dataset(seed=epoch)

    _, curve = train(build_repcnn(small_cfg, rng=0), windows, tiny_config(), progress=False)
    assert requested == [1, 2]
    assert curve.epochs(0) == 2


def test_fit_rejects_an_empty_epoch(small_cfg):
    def windows(epoch):
        return tiny_dataset() if epoch == 1 else WindowDataset.from_samples([])

    with pytest.raises(ConfigError, match="epoch 2"):
        train(build_repcnn(small_cfg, rng=0), windows, tiny_config(), progress=False)


def test_validation_loss_of_empty_set(small_graph):
    assert math.isnan(validation_loss(small_graph, WindowDataset.from_samples([]), tiny_config()))


def test_loss_curve_csv_round_trip(tmp_path):
    curve = LossCurve()
    curve.append(1, 0.5, 0.25)
    curve.append(1, 1 / 3, math.nan)
    curve.append(0, 0.1, 0.2)
    path = tmp_path / "loss.csv"
    export_loss_curves(curve, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "seed,epoch,train_loss,val_loss"
    assert lines[1] == "0,1,0.1,0.2"
    back = read_loss_curves(str(path))
    assert back.seeds == [0, 1]
    assert back.curves[1][1][0] == 1 / 3
    assert math.isnan(back.curves[1][1][1])


def test_loss_curve_summaries():
    curve = LossCurve()
    for seed, offset in ((0, 0.0), (1, 1.0)):
        curve.append(seed, 1.0 + offset, 2.0 + offset)
        curve.append(seed, 0.5 + offset, math.nan)
    assert curve.mean()[0] == (1.5, 2.5)
    assert curve.final_val_loss() == 2.5
    other = LossCurve()
    other.append(0, 1.0, 1.0)
    with pytest.raises(ConfigError):
        curve.merge(other)


def test_window_dataset_from_manifest(synth_dir):
    manifest = load_manifest(str(synth_dir / "manifest.csv"))
    cfg = tiny_config(negatives_per_utterance=5)
    data = build_window_dataset(manifest, TRAIN, seed=0, cfg=cfg)
    assert data.features.shape == (4 + 8 * 5, 16, 149)
    assert data.num_positives == 4
    threaded = build_window_dataset(manifest, TRAIN, seed=0, cfg=cfg, threads=3)
    np.testing.assert_array_equal(threaded.features, data.features)
    np.testing.assert_array_equal(threaded.labels, data.labels)
    other = build_window_dataset(manifest, TRAIN, seed=1, cfg=cfg)
    assert not np.array_equal(other.features, data.features)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(top_k=400).validate()
    with pytest.raises(ConfigError):
        TrainConfig(lr=-1.0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(seeds=[]).validate()
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"batch_size": 8})
    cfg = TrainConfig().validate()
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_epoch_windows_change_per_epoch(synth_dir):
    manifest = load_manifest(str(synth_dir / "manifest.csv"))
    cfg = tiny_config(negatives_per_utterance=5)
    windows = EpochWindows(manifest, TRAIN, seed=0, cfg=cfg)
    first, second = windows(1), windows(2)
    assert first.num_positives == second.num_positives == 4
    negatives = first.labels == 0
    assert not np.array_equal(first.features[negatives], second.features[negatives])
    again = EpochWindows(manifest, TRAIN, seed=0, cfg=cfg, threads=2)(1)
    np.testing.assert_array_equal(again.features, first.features)
    np.testing.assert_array_equal(again.labels, first.labels)


def test_epoch_windows_cache(synth_dir):
    manifest = load_manifest(str(synth_dir / "manifest.csv"))
    windows = EpochWindows(manifest, TRAIN, seed=0, cfg=tiny_config(negatives_per_utterance=2), cache=True)
    assert windows(1) is windows(1)
    assert windows(2) is not windows(1)


def test_training_on_epoch_windows_is_deterministic(synth_dir, small_cfg):
    manifest = load_manifest(str(synth_dir / "manifest.csv"))
    cfg = tiny_config(negatives_per_utterance=3)
    curves = []
    for _ in range(2):
        windows = EpochWindows(manifest, TRAIN, seed=0, cfg=cfg)
        _, curve = train(build_repcnn(small_cfg, rng=0), windows, cfg, progress=False)
        curves.append([train_loss for train_loss, _ in curve.curves[0]])
    assert curves[0] == curves[1]
