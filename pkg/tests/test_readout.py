"""Pooling/attention head contracts and the proportion-MLP baseline."""

import numpy as np
import pytest

from helpers import permute_molecules, random_system, small_model
from mixprop.autodiff import Tensor, exact_reductions, no_grad, softmax
from mixprop.errors import CapacityError
from mixprop.readout import (
    HeadConfig,
    baseline_mlp,
    init_baseline,
    pool_and_predict,
)


def test_masked_softmax_rows_are_convex():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(5, 8))
    mask = np.where(np.arange(8) < 3, 0.0, -1e30)
    with no_grad():
        w = softmax(Tensor(logits + mask), axis=-1).data
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(w[:, 3:] == 0.0)  # masked keys underflow to exact zero


def test_single_molecule_attention_is_deterministic():
    rng = np.random.default_rng(1)
    model = small_model()
    emb = Tensor(rng.normal(size=(1, 16)))
    env = rng.normal(size=(1, 5))
    with no_grad():
        a = pool_and_predict(model.params, model.cfg.head, emb,
                             np.array([0]), 1, env)
        b = pool_and_predict(model.params, model.cfg.head, emb,
                             np.array([0]), 1, env)
    assert a.shape == (1,)
    np.testing.assert_array_equal(a.data, b.data)


def test_molecule_permutation_leaves_prediction_bitwise():
    rng = np.random.default_rng(2)
    model = small_model()
    s = random_system(rng, n_mols=4)
    with no_grad(), exact_reductions():
        base = model.forward([s]).prediction.data.copy()
        for _ in range(5):
            order = rng.permutation(4)
            got = model.forward([permute_molecules(s, order)]).prediction.data
            assert got[0] == base[0]


def test_linear_and_attention_differ():
    rng = np.random.default_rng(3)
    s = random_system(rng)
    att = small_model(readout="attention", seed=5)
    lin = small_model(readout="linear", seed=5)
    with no_grad():
        ya = att.forward([s]).prediction.data[0]
        yl = lin.forward([s]).prediction.data[0]
    assert abs(ya - yl) > 1e-10


def test_capacity_error():
    rng = np.random.default_rng(4)
    model = small_model()
    emb = Tensor(rng.normal(size=(9, 16)))
    env = rng.normal(size=(1, 5))
    with pytest.raises(CapacityError):
        with no_grad():
            pool_and_predict(model.params, model.cfg.head, emb,
                             np.zeros(9, dtype=int), 1, env)


def test_attention_dropout_only_with_rng():
    rng = np.random.default_rng(5)
    model = small_model(dropout=0.1)
    s = random_system(rng)
    with no_grad():
        a = model.forward([s]).prediction.data[0]
        b = model.forward([s]).prediction.data[0]
        c = model.forward([s], rng=np.random.default_rng(0)).prediction.data[0]
    assert a == b          # eval path has no dropout
    assert a != c          # training rng engages the mask


def test_attention_temperature_changes_weights():
    rng = np.random.default_rng(6)
    s = random_system(rng)
    t1 = small_model(seed=8, temperature=1.0)
    t2 = small_model(seed=8, temperature=2.0)
    with no_grad():
        y1 = t1.forward([s]).prediction.data[0]
        y2 = t2.forward([s]).prediction.data[0]
    assert y1 != y2


def test_baseline_mlp_paths():
    rng = np.random.default_rng(7)
    params = {}
    init_baseline(rng, params, vocab_len=6, env_dim=5, hidden=16)
    with no_grad():
        zero = baseline_mlp(params, np.zeros((1, 6)), np.zeros((1, 5)))
        zero2 = baseline_mlp(params, np.zeros((1, 6)), np.zeros((1, 5)))
        rnd = baseline_mlp(params, rng.random((3, 6)), rng.random((3, 5)))
    assert zero.data[0] == zero2.data[0]  # pure bias path, deterministic
    assert rnd.shape == (3,)
    x = rng.random((1, 6))
    e = rng.random((1, 5))
    with no_grad():
        p1 = baseline_mlp(params, x, e).data[0]
        p2 = baseline_mlp(params, x, e).data[0]
    assert p1 == p2
