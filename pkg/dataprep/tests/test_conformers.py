"""Conformer resolution: determinism, atom counts, failure modes."""

import numpy as np
import pytest

from mixprep import LookupFailure
from mixprep.conformers import generate_conformer
from mixprep.structures import REGISTRY, build_cache, load_cache


@pytest.fixture(scope="module")
def cache(tmp_path_factory):
    path = tmp_path_factory.mktemp("cache") / "structures.json"
    build_cache(path, seed=7)
    return load_cache(path)


def test_ethylene_carbonate_has_ten_atoms(cache):
    atoms = generate_conformer("EC", cache=cache)
    assert len(atoms) == 10  # C3H4O3
    zs = sorted(z for z, _, _ in atoms)
    assert zs == sorted([6] * 3 + [1] * 4 + [8] * 3)
    atoms2 = generate_conformer("ethylene carbonate", cache=cache)
    assert atoms == atoms2  # alias resolves to the same cached entry


def test_empty_identifier_fails():
    with pytest.raises(LookupFailure):
        generate_conformer("", cache=None)


def test_unknown_identifier_lists_sources(cache):
    with pytest.raises(LookupFailure) as exc:
        generate_conformer("unobtainium", cache=cache)
    msg = str(exc.value)
    assert "cache" in msg and "registry" in msg


def test_deterministic_per_seed(cache):
    a = generate_conformer("DMC", cache=None, seed=11)
    b = generate_conformer("DMC", cache=None, seed=11)
    assert a == b
    c = generate_conformer("DMC", cache=None, seed=12)
    assert a != c


def test_registry_fetch_hook(cache):
    def fetch(name):
        return ["Li"], np.array([[0.0, 0.0, 0.0]])

    from mixprep.structures import TYPE_INDEX

    atoms = generate_conformer("LiPF6", cache=None, registry_fetch=fetch)
    assert atoms == [(3, TYPE_INDEX["Li"], [0.0, 0.0, 0.0])]


def test_all_registry_molecules_resolve(cache):
    for name, formula in REGISTRY.items():
        atoms = generate_conformer(name, cache=cache)
        assert len(atoms) == sum(formula.values()), name
        xyz = np.array([a[2] for a in atoms])
        assert np.abs(xyz.mean(axis=0)).max() < 1e-9  # centered
        assert np.isfinite(xyz).all()


def test_cache_is_pinned(tmp_path):
    p1 = tmp_path / "c1.json"
    p2 = tmp_path / "c2.json"
    build_cache(p1, seed=7)
    build_cache(p2, seed=7)
    assert p1.read_bytes() == p2.read_bytes()
