"""Shared builders for model-level tests: random systems and rotations."""

import numpy as np

from mixprop.data import MixtureSystem, build_geometric_graph
from mixprop.encoder import EncoderConfig
from mixprop.gin import GinConfig
from mixprop.model import MixtureModel, ModelConfig
from mixprop.readout import HeadConfig

TYPE_DIM = 4


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


def cubic_eigenvalues(c):
    """Closed-form eigenvalues of a symmetric 3x3 (trigonometric form)."""
    c = np.asarray(c, dtype=np.float64)
    p1 = c[0, 1] ** 2 + c[0, 2] ** 2 + c[1, 2] ** 2
    if p1 == 0.0:
        return np.sort(np.diag(c))[::-1]
    q = np.trace(c) / 3.0
    p2 = ((c[0, 0] - q) ** 2 + (c[1, 1] - q) ** 2 + (c[2, 2] - q) ** 2) + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    b = (c - q * np.eye(3)) / p
    r = np.clip(np.linalg.det(b) / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    lam1 = q + 2.0 * p * np.cos(phi)
    lam3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    return np.array([lam1, np.trace(c) - lam1 - lam3, lam3])


def random_system(rng, n_mols=None, n_atoms=(3, 15), sys_id="sys") -> MixtureSystem:
    m = int(n_mols if n_mols is not None else rng.integers(2, 6))
    w = rng.dirichlet(np.full(m, 2.0))
    w = np.clip(w, 0.02, None)
    w = w / w.sum()
    graphs = []
    for k in range(m):
        n = int(rng.integers(n_atoms[0], n_atoms[1] + 1))
        coords = rng.normal(size=(n, 3)) * np.array([1.6, 1.1, 0.7])
        atoms = [(int(rng.integers(1, 9)), int(rng.integers(0, TYPE_DIM)), c)
                 for c in coords]
        graphs.append(build_geometric_graph(
            atoms, w=float(w[k]), role="salt" if k == 0 else "solvent",
            type_dim=TYPE_DIM, name=f"mol{k}"))
    return MixtureSystem(
        id=sys_id, temperature_K=float(rng.uniform(250, 400)),
        conc_molal=float(rng.uniform(0.1, 2.0)), conc_molar=None,
        conductivity=float(rng.uniform(0.5, 20.0)), graphs=graphs)


def rotate_system(system: MixtureSystem, rotations) -> MixtureSystem:
    """Independent per-molecule rotation of coordinates (graph order kept)."""
    graphs = []
    for g, r in zip(system.graphs, rotations):
        from dataclasses import replace

        graphs.append(replace(g, coords=g.coords @ r.T))
    from dataclasses import replace

    return replace(system, graphs=graphs)


def permute_nodes(system: MixtureSystem, perms) -> MixtureSystem:
    from dataclasses import replace

    graphs = []
    for g, p in zip(system.graphs, perms):
        remap = np.empty(p.size, dtype=np.int64)
        remap[p] = np.arange(p.size)
        edges = (remap[g.edges.reshape(-1)].reshape(-1, 2)
                 if g.edges.size else g.edges)
        graphs.append(replace(
            g, coords=g.coords[p], atom_z=g.atom_z[p], atom_type=g.atom_type[p],
            node_scalars=g.node_scalars[p], edges=edges,
            edge_weights=g.edge_weights))
    return replace(system, graphs=graphs)


def permute_molecules(system: MixtureSystem, order) -> MixtureSystem:
    from dataclasses import replace

    return replace(system, graphs=[system.graphs[i] for i in order])


def small_model(variant="free", frames="standard", readout="attention",
                proportion_mode="append", seed=0, hidden=16, channels=2,
                enc_layers=2, gin_layers=2, attn_layers=1, heads=2,
                dropout=0.0, temperature=1.0) -> MixtureModel:
    cfg = ModelConfig(
        input_dim=2 + TYPE_DIM,
        encoder=EncoderConfig(layers=enc_layers, hidden=hidden, channels=channels),
        gin=GinConfig(layers=gin_layers, variant=variant, hidden=hidden,
                      channels=channels),
        head=HeadConfig(heads=heads, attention_layers=attn_layers, hidden=hidden,
                        readout=readout, dropout=dropout, temperature=temperature),
        frames=frames, proportion_mode=proportion_mode)
    return MixtureModel.create(cfg, seed=seed)
