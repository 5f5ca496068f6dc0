"""Whole-model symmetry contract (scalar + node outputs) and batching."""

import numpy as np
import pytest

from helpers import (
    permute_molecules,
    permute_nodes,
    random_rotation,
    random_system,
    rotate_system,
    small_model,
)
from mixprop.autodiff import exact_reductions, no_grad
from mixprop.errors import ContractError


def test_rotation_invariance_strict_frames():
    rng = np.random.default_rng(0)
    model = small_model(frames="strict")
    for trial in range(5):
        s = random_system(rng, sys_id=f"s{trial}")
        rots = [random_rotation(rng) for _ in s.graphs]
        with no_grad(), exact_reductions():
            base = model.forward([s], collect=True)
            rot = model.forward([rotate_system(s, rots)], collect=True)
        y0, y1 = base.prediction.data[0], rot.prediction.data[0]
        assert abs(y1 - y0) / max(abs(y0), 1e-12) < 1e-8
        np.testing.assert_allclose(rot.node_h.data, base.node_h.data, atol=1e-8)
        b = base.batch
        for k in range(b.n_molecules):
            lo, hi = b.mol_starts[k], b.mol_starts[k] + b.mol_sizes[k]
            np.testing.assert_allclose(rot.node_v.data[lo:hi],
                                       base.node_v.data[lo:hi] @ rots[k].T,
                                       atol=1e-8)


def test_standard_frames_break_rotation_invariance():
    rng = np.random.default_rng(1)
    model = small_model(frames="standard")
    deviations = []
    for trial in range(10):
        s = random_system(rng, sys_id=f"s{trial}")
        rots = [random_rotation(rng) for _ in s.graphs]
        with no_grad():
            y0 = model.forward([s]).prediction.data[0]
            y1 = model.forward([rotate_system(s, rots)]).prediction.data[0]
        deviations.append(abs(y1 - y0) / max(abs(y0), 1e-12))
    assert max(deviations) > 1e-6  # the documented non-equivariance


def test_node_permutation_exact():
    rng = np.random.default_rng(2)
    model = small_model(frames="strict")
    s = random_system(rng)
    with no_grad(), exact_reductions():
        base = model.forward([s], collect=True)
        for _ in range(5):
            perms = [rng.permutation(g.n_atoms) for g in s.graphs]
            got = model.forward([permute_nodes(s, perms)], collect=True)
            assert got.prediction.data[0] == base.prediction.data[0]
            b = base.batch
            for k in range(b.n_molecules):
                lo = b.mol_starts[k]
                hi = lo + b.mol_sizes[k]
                np.testing.assert_array_equal(got.node_h.data[lo:hi],
                                              base.node_h.data[lo:hi][perms[k]])


def test_molecule_permutation_exact():
    rng = np.random.default_rng(3)
    model = small_model()
    s = random_system(rng, n_mols=5)
    with no_grad(), exact_reductions():
        base = model.forward([s]).prediction.data[0]
        for _ in range(5):
            order = rng.permutation(5)
            got = model.forward([permute_molecules(s, order)]).prediction.data[0]
            assert got == base


def test_proportion_modes_differ():
    rng = np.random.default_rng(4)
    s = random_system(rng)
    append = small_model(seed=9, proportion_mode="append")
    multiply = small_model(seed=9, proportion_mode="multiply")
    with no_grad():
        ya = append.forward([s]).prediction.data[0]
        ym = multiply.forward([s]).prediction.data[0]
    assert ya != ym


def test_batching_matches_single_system_evaluation():
    rng = np.random.default_rng(5)
    model = small_model()
    systems = [random_system(rng, sys_id=f"s{i}") for i in range(6)]
    with no_grad():
        batched = model.forward(systems).prediction.data
        singles = np.array([model.forward([s]).prediction.data[0]
                            for s in systems])
    np.testing.assert_allclose(batched, singles, rtol=1e-10, atol=1e-12)


def test_variants_all_run_and_differ():
    rng = np.random.default_rng(6)
    s = random_system(rng)
    ys = {}
    for variant in ("free", "quaternion", "sixd", "graphwise"):
        model = small_model(variant=variant, seed=11)
        with no_grad():
            ys[variant] = model.forward([s]).prediction.data[0]
    assert len({round(v, 9) for v in ys.values()}) > 1


def test_empty_batch_rejected():
    model = small_model()
    with pytest.raises(ContractError):
        model.pack([])


def test_input_dim_mismatch_rejected():
    rng = np.random.default_rng(7)
    s = random_system(rng)
    model = small_model()
    model.cfg.input_dim = 99
    with pytest.raises(ContractError):
        model.pack([s])


def test_noise_requires_rng():
    rng = np.random.default_rng(8)
    s = random_system(rng)
    model = small_model()
    with pytest.raises(ContractError):
        model.pack([s], noise_sigma=0.3)
