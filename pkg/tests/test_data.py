"""Canonical format, graph construction and split contracts."""

import json

import numpy as np
import pytest

from mixprop import synth
from mixprop.data import (
    GeometricGraph,
    SplitSpec,
    build_geometric_graph,
    env_stats,
    make_split,
    parse_dataset,
    perturb_coordinates,
    serialize_dataset,
    system_to_record,
)
from mixprop.errors import (
    ContractError,
    DegenerateSplitError,
    ParseError,
    ValidationError,
)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    path = synth.write_corpus("calisol", out, n_rows=120, seed=3)
    return path


def test_build_graph_edges_and_centering():
    g = build_geometric_graph(
        [(1, 0, [0.0, 0.0, 0.0]), (1, 0, [5.0, 0.0, 0.0])], w=0.5, role="solvent")
    assert g.edges.shape == (2, 2)  # one undirected edge, stored both ways
    np.testing.assert_allclose(g.edge_weights, [5.0, 5.0])
    np.testing.assert_allclose(g.coords, [[-2.5, 0, 0], [2.5, 0, 0]])

    far = build_geometric_graph(
        [(1, 0, [0.0, 0.0, 0.0]), (1, 0, [7.0, 0.0, 0.0])], w=0.5, role="solvent")
    assert far.edges.shape == (0, 2)

    two = build_geometric_graph(
        [(6, 1, [0.0, 0.0, 0.0]), (6, 1, [2.0, 0.0, 0.0])], w=0.5, role="salt")
    np.testing.assert_allclose(two.coords, [[-1.0, 0, 0], [1.0, 0, 0]])
    assert abs(two.coords.mean(axis=0)).max() <= 1e-10


def test_build_graph_matches_brute_force_edges():
    rng = np.random.default_rng(0)
    for _ in range(25):
        n = rng.integers(2, 12)
        pts = rng.uniform(-4, 4, size=(n, 3))
        g = build_geometric_graph(
            [(6, 1, p) for p in pts], w=0.3, role="solvent")
        centered = pts - pts.mean(axis=0)
        expect = set()
        for i in range(n):
            for j in range(n):
                if i != j and np.linalg.norm(centered[i] - centered[j]) < 6.0:
                    expect.add((i, j))
        assert set(map(tuple, g.edges)) == expect


def test_build_graph_contracts():
    with pytest.raises(ContractError):
        build_geometric_graph([], w=0.5, role="salt")
    with pytest.raises(ContractError):
        build_geometric_graph([(1, 0, [np.inf, 0, 0])], w=0.5, role="salt")


def test_node_scalars_append_proportion():
    g = build_geometric_graph(
        [(8, 2, [0.0, 0.0, 0.0]), (1, 0, [1.0, 0.0, 0.0])],
        w=0.25, role="solvent", type_dim=4)
    assert g.node_scalars.shape == (2, 6)  # z + 4 one-hot + w
    np.testing.assert_allclose(g.node_scalars[:, -1], 0.25)
    np.testing.assert_allclose(g.node_scalars[:, 0], [8.0, 1.0])
    assert g.node_scalars[0, 1 + 2] == 1.0


def test_parse_counts_and_roundtrip(small_corpus, tmp_path):
    systems = parse_dataset(small_corpus)
    assert len(systems) == 120
    assert all(len(s.graphs) >= 2 for s in systems)

    out = tmp_path / "echo.jsonl"
    serialize_dataset(systems, out, type_to_element=synth.TYPE_TO_ELEMENT)
    again = parse_dataset(out)
    assert len(again) == len(systems)
    for a, b in zip(systems, again):
        assert a.id == b.id
        assert a.conductivity == b.conductivity
        assert a.temperature_K == b.temperature_K
        assert a.conc_molal == b.conc_molal and a.conc_molar == b.conc_molar
        for ga, gb in zip(a.graphs, b.graphs):
            assert ga.role == gb.role and ga.name == gb.name and ga.w == gb.w
            np.testing.assert_allclose(ga.coords, gb.coords, atol=1e-12)
            np.testing.assert_array_equal(ga.atom_z, gb.atom_z)


def test_parse_errors(tmp_path):
    bad_json = tmp_path / "bad.jsonl"
    bad_json.write_text('{"id": "a"}\n{broken\n', encoding="utf-8")
    with pytest.raises(ParseError) as exc:
        parse_dataset(bad_json)
    assert exc.value.line == 2

    record = {
        "id": "x", "temperature_K": 300.0, "conc_molal": 1.0,
        "conc_molar": None, "conductivity_mS_cm": 5.0,
        "molecules": [
            {"role": "salt", "name": "s", "w": 0.4,
             "atoms": [{"z": 3, "type": 0, "xyz": [0, 0, 0]},
                       {"z": 9, "type": 1, "xyz": [1.5, 0, 0]}]},
            {"role": "solvent", "name": "v", "w": 0.5,
             "atoms": [{"z": 6, "type": 2, "xyz": [0, 0, 0]}]},
        ],
    }
    short = tmp_path / "short.jsonl"
    short.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(ValidationError, match="sum"):
        parse_dataset(short)

    record["molecules"][1]["w"] = 0.6
    record["molecules"][1]["role"] = "salt"
    only_salt = tmp_path / "onlysalt.jsonl"
    only_salt.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(ValidationError, match="salt"):
        parse_dataset(only_salt)


def test_random_split_sizes_and_determinism(small_corpus):
    systems = parse_dataset(small_corpus)
    spec = SplitSpec(mode="random", seed=7)
    tr1, va1, te1 = make_split(systems, spec)
    tr2, va2, te2 = make_split(systems, spec)
    assert [s.id for s in tr1] == [s.id for s in tr2]
    assert [s.id for s in va1] == [s.id for s in va2]
    assert [s.id for s in te1] == [s.id for s in te2]
    assert (len(tr1), len(va1), len(te1)) == (84, 24, 12)
    ids = {s.id for s in systems}
    got = [s.id for s in tr1 + va1 + te1]
    assert len(got) == len(ids) and set(got) == ids


def test_ten_records_split_7_2_1():
    ten = parse_dataset_from_records(10)
    tr, va, te = make_split(ten, SplitSpec(mode="random", seed=1))
    assert (len(tr), len(va), len(te)) == (7, 2, 1)


def parse_dataset_from_records(n):
    recs = synth.generate_calisol(n, seed=11, ood_target=0)
    systems = []
    import io
    text = "\n".join(json.dumps(r) for r in recs)
    import tempfile, os
    fd, path = tempfile.mkstemp(suffix=".jsonl")
    with os.fdopen(fd, "w") as fh:
        fh.write(text + "\n")
    try:
        systems = parse_dataset(path)
    finally:
        os.unlink(path)
    return systems


def test_ood_split_respects_threshold(small_corpus):
    systems = parse_dataset(small_corpus)
    # synthesize a spread of conductivities for a meaningful OOD cut
    for i, s in enumerate(systems):
        s.conductivity = 0.5 + 0.2 * i
    spec = SplitSpec(mode="ood_conductivity", threshold=10.0, seed=7)
    tr, va, te = make_split(systems, spec)
    assert all(s.conductivity > 10.0 for s in te)
    assert all(s.conductivity <= 10.0 for s in tr + va)
    assert len(tr) + len(va) + len(te) == len(systems)
    rest = len(tr) + len(va)
    assert len(tr) == int(np.floor(0.8 * rest))

    for i, s in enumerate(systems):
        s.temperature_K = 250.0 + i
    tr, va, te = make_split(systems, SplitSpec(mode="ood_temperature", seed=7))
    assert all(s.temperature_K > 320.0 for s in te)


def test_degenerate_split_raises(small_corpus):
    systems = parse_dataset(small_corpus)
    for s in systems:
        s.conductivity = 1.0
    with pytest.raises(DegenerateSplitError):
        make_split(systems, SplitSpec(mode="ood_conductivity", seed=7))


def test_perturb_coordinates():
    g = build_geometric_graph(
        [(6, 1, [0.0, 0.0, 0.0]), (6, 1, [1.4, 0.0, 0.0]),
         (8, 2, [0.0, 1.2, 0.0])], w=0.5, role="solvent")
    same = perturb_coordinates(g, 0.0, seed=5)
    assert same is g  # bit-exact contract for sigma == 0

    a = perturb_coordinates(g, 0.3, seed=5)
    b = perturb_coordinates(g, 0.3, seed=5)
    np.testing.assert_array_equal(a.coords, b.coords)
    np.testing.assert_array_equal(a.edges, g.edges)
    np.testing.assert_array_equal(a.edge_weights, g.edge_weights)

    coords = np.random.default_rng(0).uniform(-3, 3, (33334, 3))
    big = GeometricGraph(
        name="blob", role="solvent", w=0.5,
        atom_z=np.full(33334, 6), atom_type=np.full(33334, 1),
        coords=coords - coords.mean(axis=0),
        node_scalars=np.zeros((33334, 3)),
        edges=np.zeros((0, 2), dtype=int), edge_weights=np.zeros(0))
    noisy = perturb_coordinates(big, 0.3, seed=9)
    sample_std = (noisy.coords - big.coords).std()  # ~1e5 coordinates
    assert 0.285 <= sample_std <= 0.315


def test_env_vector_and_stats(small_corpus):
    systems = parse_dataset(small_corpus)
    v = systems[0].env_vector()
    assert v.shape == (5,)
    has_molal = v[2] == 1.0
    if has_molal:
        assert v[1] > 0
    mean, std = env_stats(systems)
    assert mean.shape == (5,) and np.all(std > 0)


def test_system_to_record_matches_schema(small_corpus):
    systems = parse_dataset(small_corpus)
    rec = system_to_record(systems[0])
    assert set(rec) == {"id", "temperature_K", "conc_molal", "conc_molar",
                        "conductivity_mS_cm", "molecules"}
    mol = rec["molecules"][0]
    assert set(mol) == {"role", "name", "w", "atoms"}
    assert set(mol["atoms"][0]) == {"z", "type", "xyz"}
