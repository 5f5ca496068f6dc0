"""Loss composition, metrics oracles, determinism, checkpoint round-trip."""

import json
import os
import tempfile

import numpy as np
import pytest

from helpers import random_system, small_model
from mixprop import synth
from mixprop.autodiff import Tensor, no_grad
from mixprop.data import SplitSpec, make_split, parse_dataset
from mixprop.errors import ContractError, CorrelationUndefinedError
from mixprop.training import (
    TrainConfig,
    compute_loss,
    evaluate_metrics,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)


def _toy_dataset(n=40, seed=5):
    with tempfile.TemporaryDirectory() as tmp:
        path = synth.write_corpus("calisol", tmp, n_rows=n, seed=seed)
        return parse_dataset(path)


TOY_CONFIG = dict(lr=2e-3, epochs=3, batch_size=16, seed=7, gamma=1.0,
                  noise_sigma=0.1, hidden_dim=16, channels=2, encoder_layers=2,
                  gin_layers=1, attention_heads=2, attention_layers=1)


def test_config_paper_defaults():
    cfg = TrainConfig()
    assert cfg.lr == 5e-5
    assert cfg.weight_decay == 1e-12
    assert cfg.batch_size == 128
    assert cfg.seed == 7
    assert cfg.gamma == 128.0
    assert cfg.noise_sigma == 0.3
    assert cfg.epochs <= 500
    assert cfg.hidden_dim == 64 and cfg.channels == 8
    assert cfg.encoder_layers == 4 and cfg.gin_layers == 3
    assert cfg.attention_heads == 4 and cfg.attention_layers == 3


def test_epochs_bounded():
    with pytest.raises(ContractError):
        TrainConfig(epochs=501)


def test_loss_reduces_to_mse_without_noisy_nodes():
    rng = np.random.default_rng(0)
    systems = [random_system(rng, sys_id=f"s{i}") for i in range(4)]
    model = small_model()
    total, mse, _ = compute_loss(model, systems, None, None, gamma=0.0,
                                 noise_sigma=0.0, noisy_nodes=True)
    assert total.item() == mse.item()
    total2, mse2, _ = compute_loss(model, systems, None, None, gamma=128.0,
                                   noise_sigma=0.3, noisy_nodes=False)
    assert total2.item() == mse2.item()
    # noisy-nodes off means no coordinate perturbation: bitwise equal paths
    assert total2.item() == total.item()


def test_denoise_term_zero_when_encoder_preserves_coordinates():
    rng = np.random.default_rng(1)
    systems = [random_system(rng)]
    model = small_model()
    for key in list(model.params):
        if ".coord." in key:
            model.params[key] = Tensor(np.zeros(model.params[key].shape),
                                       requires_grad=True)
    _, _, denoise = compute_loss(model, systems, None, None, gamma=128.0,
                                 noise_sigma=0.0, noisy_nodes=True)
    assert denoise.item() == 0.0


def test_metrics_oracles():
    t = np.array([1.0, 2.0, 3.0, 4.0])
    mse, mae, pear, spear = evaluate_metrics(t, t)
    assert mse == 0.0 and mae == 0.0 and pear == 1.0 and spear == 1.0

    zero_mean = np.array([-1.5, -0.5, 0.5, 1.5])
    _, _, pear, spear = evaluate_metrics(-zero_mean, zero_mean)
    assert pear == pytest.approx(-1.0, abs=1e-12)
    assert spear == pytest.approx(-1.0, abs=1e-12)

    rng = np.random.default_rng(2)
    a, b = rng.normal(size=100), rng.normal(size=100)
    _, _, pear, _ = evaluate_metrics(a, b)
    da, db = a - a.mean(), b - b.mean()
    oracle = (da * db).sum() / np.sqrt((da * da).sum() * (db * db).sum())
    assert abs(pear - oracle) < 1e-12

    with pytest.raises(CorrelationUndefinedError):
        evaluate_metrics(np.ones(5), np.arange(5.0))


def test_spearman_handles_ties():
    p = np.array([1.0, 1.0, 2.0, 3.0])
    t = np.array([1.0, 2.0, 3.0, 4.0])
    _, _, _, spear = evaluate_metrics(p, t)
    # average ranks for p: (1.5, 1.5, 3, 4)
    ranks = np.array([1.5, 1.5, 3.0, 4.0])
    rt = np.array([1.0, 2.0, 3.0, 4.0])
    dr, dt = ranks - ranks.mean(), rt - rt.mean()
    oracle = (dr * dt).sum() / np.sqrt((dr * dr).sum() * (dt * dt).sum())
    assert spear == pytest.approx(oracle, abs=1e-12)


def test_training_decreases_loss_and_is_deterministic():
    systems = _toy_dataset(40)
    tr, va, _ = make_split(systems, SplitSpec(mode="random", seed=7))
    cfg = TrainConfig(**TOY_CONFIG)
    model1, hist1, art1 = train(tr, va, cfg, type_dim=12)
    model2, hist2, art2 = train(tr, va, cfg, type_dim=12)
    assert hist1.to_csv() == hist2.to_csv()  # bit-identical histories
    assert hist1.rows[-1][1] < hist1.rows[0][1]
    for k in model1.params:
        np.testing.assert_array_equal(model1.params[k].data,
                                      model2.params[k].data)


def test_checkpoint_roundtrip_and_predict():
    systems = _toy_dataset(30, seed=9)
    tr, va, te = make_split(systems, SplitSpec(mode="random", seed=3))
    cfg = TrainConfig(**{**TOY_CONFIG, "epochs": 2})
    model, _, art = train(tr, va, cfg, type_dim=12)
    fd, path = tempfile.mkstemp(suffix=".npz")
    os.close(fd)
    try:
        save_checkpoint(path, model, cfg, art)
        loaded, cfg2, art2 = load_checkpoint(path)
        assert cfg2.hidden_dim == cfg.hidden_dim
        p1 = predict(model, te, art["env_mean"], art["env_std"])
        p2 = predict(loaded, te, art2["env_mean"], art2["env_std"])
        np.testing.assert_array_equal(p1, p2)
    finally:
        os.unlink(path)


def test_history_csv_shape():
    systems = _toy_dataset(30, seed=11)
    tr, va, _ = make_split(systems, SplitSpec(mode="random", seed=3))
    cfg = TrainConfig(**{**TOY_CONFIG, "epochs": 2})
    _, hist, _ = train(tr, va, cfg, type_dim=12)
    lines = hist.to_csv().strip().splitlines()
    assert lines[0].startswith("epoch,train_loss")
    assert len(lines) == 3
