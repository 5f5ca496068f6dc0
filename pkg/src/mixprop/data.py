"""Canonical mixture-system format, geometric graph construction, splits.

Canonical files are UTF-8 JSON-lines, one system per line:

    {"id": str, "temperature_K": num, "conc_molal": num|null,
     "conc_molar": num|null, "conductivity_mS_cm": num,
     "molecules": [{"role": "salt"|"solvent", "name": str, "w": num,
                    "atoms": [{"z": int, "type": int, "xyz": [x, y, z]}]}]}

Coordinates are in Angstrom and stored centered.  A sidecar ``meta.json``
in the same directory maps type indices to element symbols.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    ContractError,
    DegenerateSplitError,
    ParseError,
    ValidationError,
)

DEFAULT_CUTOFF = 6.0
OOD_CONDUCTIVITY_THRESHOLD = 10.0  # mS/cm
OOD_TEMPERATURE_THRESHOLD = 320.0  # K
ENV_DIM = 5  # T, molal, molal-present, molar, molar-present


@dataclass
class GeometricGraph:
    """One molecule: scalar node features, centered coordinates, edges.

    ``node_scalars`` rows are [z, one-hot(type), w] - the mixture proportion
    is appended to every atom (the proportion-embedding step).  Equivariant
    per-node features are not stored here; they are created as zeros when
    the interaction stack runs.
    """

    name: str
    role: str  # "salt" | "solvent"
    w: float
    atom_z: np.ndarray        # (N,) int
    atom_type: np.ndarray     # (N,) int
    coords: np.ndarray        # (N, 3) centered, Angstrom
    node_scalars: np.ndarray  # (N, 2 + type_dim)
    edges: np.ndarray         # (E, 2) int, directed both ways
    edge_weights: np.ndarray  # (E,) Euclidean distances

    @property
    def n_atoms(self) -> int:
        return self.coords.shape[0]


@dataclass
class MixtureSystem:
    """A set of molecular graphs plus shared conditions and the target."""

    id: str
    temperature_K: float
    conc_molal: float | None
    conc_molar: float | None
    conductivity: float  # mS/cm
    graphs: list[GeometricGraph]

    def env_vector(self) -> np.ndarray:
        """[T, molal, has_molal, molar, has_molar]; absent values are 0+flag 0."""
        molal = self.conc_molal
        molar = self.conc_molar
        return np.array([
            self.temperature_K,
            0.0 if molal is None else molal,
            0.0 if molal is None else 1.0,
            0.0 if molar is None else molar,
            0.0 if molar is None else 1.0,
        ])


@dataclass
class SplitSpec:
    mode: str = "random"  # random | ood_conductivity | ood_temperature
    fractions: tuple = (0.7, 0.2, 0.1)
    threshold: float | None = None
    seed: int = 7

    def resolved_threshold(self) -> float:
        if self.threshold is not None:
            return self.threshold
        if self.mode == "ood_conductivity":
            return OOD_CONDUCTIVITY_THRESHOLD
        if self.mode == "ood_temperature":
            return OOD_TEMPERATURE_THRESHOLD
        raise ContractError(f"no threshold for split mode '{self.mode}'")


def build_geometric_graph(atoms, w: float, role: str,
                          cutoff: float = DEFAULT_CUTOFF,
                          type_dim: int | None = None,
                          name: str = "") -> GeometricGraph:
    """Center coordinates, build the distance-cutoff edge set, and append
    the proportion to every node's scalar features.

    ``atoms`` is a sequence of (z, type_index, xyz) triples.
    """
    if len(atoms) == 0:
        raise ContractError("build_geometric_graph: empty atom list")
    z = np.array([a[0] for a in atoms], dtype=np.int64)
    types = np.array([a[1] for a in atoms], dtype=np.int64)
    coords = np.array([a[2] for a in atoms], dtype=np.float64)
    if coords.shape != (len(atoms), 3) or not np.all(np.isfinite(coords)):
        raise ContractError("build_geometric_graph: coordinates must be finite (N, 3)")
    coords = coords - coords.mean(axis=0)

    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt(np.add.reduce(diff * diff, axis=-1))
    src, dst = np.nonzero((dist < cutoff) & ~np.eye(len(atoms), dtype=bool))
    edges = np.stack([src, dst], axis=1)
    weights = dist[src, dst]

    dim = int(types.max()) + 1 if type_dim is None else type_dim
    onehot = np.zeros((len(atoms), dim))
    onehot[np.arange(len(atoms)), types] = 1.0
    scalars = np.concatenate(
        [z[:, None].astype(np.float64), onehot, np.full((len(atoms), 1), w)], axis=1)

    return GeometricGraph(
        name=name, role=role, w=float(w), atom_z=z, atom_type=types,
        coords=coords, node_scalars=scalars, edges=edges, edge_weights=weights)


def _validate_number(obj, key, line, allow_null=False):
    if key not in obj:
        raise ValidationError("missing", field=key, line=line)
    val = obj[key]
    if val is None:
        if allow_null:
            return None
        raise ValidationError("must not be null", field=key, line=line)
    if not isinstance(val, (int, float)) or not math.isfinite(val):
        raise ValidationError(f"not a finite number: {val!r}", field=key, line=line)
    return float(val)


def _parse_record(obj: dict, line: int, type_dim: int) -> MixtureSystem:
    if not isinstance(obj, dict):
        raise ValidationError("record is not an object", line=line)
    sys_id = obj.get("id")
    if not isinstance(sys_id, str) or not sys_id:
        raise ValidationError("missing or empty", field="id", line=line)
    temperature = _validate_number(obj, "temperature_K", line)
    molal = _validate_number(obj, "conc_molal", line, allow_null=True)
    molar = _validate_number(obj, "conc_molar", line, allow_null=True)
    kappa = _validate_number(obj, "conductivity_mS_cm", line)

    molecules = obj.get("molecules")
    if not isinstance(molecules, list) or not molecules:
        raise ValidationError("must be a non-empty list", field="molecules", line=line)

    graphs = []
    w_total = 0.0
    roles = set()
    for k, mol in enumerate(molecules):
        where = f"molecules[{k}]"
        role = mol.get("role")
        if role not in ("salt", "solvent"):
            raise ValidationError(f"invalid role {role!r}", field=f"{where}.role", line=line)
        roles.add(role)
        w = mol.get("w")
        if not isinstance(w, (int, float)) or not (0.0 < w < 1.0):
            raise ValidationError(f"proportion must lie in (0, 1), got {w!r}",
                                  field=f"{where}.w", line=line)
        w_total += float(w)
        atoms_raw = mol.get("atoms")
        if not isinstance(atoms_raw, list) or not atoms_raw:
            raise ValidationError("must be a non-empty list",
                                  field=f"{where}.atoms", line=line)
        atoms = []
        for j, atom in enumerate(atoms_raw):
            z = atom.get("z")
            t = atom.get("type")
            xyz = atom.get("xyz")
            if not isinstance(z, int) or z < 1:
                raise ValidationError(f"bad atomic number {z!r}",
                                      field=f"{where}.atoms[{j}].z", line=line)
            if not isinstance(t, int) or t < 0 or t >= type_dim:
                raise ValidationError(f"type index {t!r} outside vocabulary",
                                      field=f"{where}.atoms[{j}].type", line=line)
            if (not isinstance(xyz, list) or len(xyz) != 3
                    or not all(isinstance(u, (int, float)) and math.isfinite(u)
                               for u in xyz)):
                raise ValidationError("xyz must be three finite numbers",
                                      field=f"{where}.atoms[{j}].xyz", line=line)
            atoms.append((z, t, xyz))
        graphs.append(build_geometric_graph(
            atoms, w=float(w), role=role, type_dim=type_dim,
            name=str(mol.get("name", ""))))

    if abs(w_total - 1.0) > 1e-9:
        raise ValidationError(f"proportions sum to {w_total!r}, expected 1",
                              field="molecules[*].w", line=line)
    if roles != {"salt", "solvent"}:
        raise ValidationError("system needs at least one salt and one solvent",
                              field="molecules[*].role", line=line)
    return MixtureSystem(
        id=sys_id, temperature_K=temperature, conc_molal=molal,
        conc_molar=molar, conductivity=kappa, graphs=graphs)


def load_meta(path) -> dict | None:
    meta_path = Path(path).parent / "meta.json"
    if not meta_path.exists():
        return None
    with open(meta_path, encoding="utf-8") as fh:
        return json.load(fh)


def parse_dataset(path) -> list[MixtureSystem]:
    """Parse a canonical JSON-lines file, validating every invariant.

    Record order is preserved.  The type vocabulary size comes from the
    sidecar ``meta.json`` when present, otherwise from the file contents.
    """
    path = Path(path)
    raw: list[tuple[int, dict]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                raw.append((lineno, json.loads(text)))
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", line=lineno) from exc

    meta = load_meta(path)
    if meta and "type_to_element" in meta:
        type_dim = len(meta["type_to_element"])
    else:
        type_dim = 0
        for _, obj in raw:
            for mol in obj.get("molecules", []) if isinstance(obj, dict) else []:
                for atom in mol.get("atoms", []) if isinstance(mol, dict) else []:
                    t = atom.get("type")
                    if isinstance(t, int):
                        type_dim = max(type_dim, t + 1)
        type_dim = max(type_dim, 1)

    return [_parse_record(obj, lineno, type_dim) for lineno, obj in raw]


def serialize_dataset(systems: list[MixtureSystem], path,
                      type_to_element: dict | None = None) -> None:
    """Write systems back to canonical JSON-lines (plus meta.json if given)."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for s in systems:
            fh.write(json.dumps(system_to_record(s)) + "\n")
    if type_to_element is not None:
        with open(path.parent / "meta.json", "w", encoding="utf-8") as fh:
            json.dump({"type_to_element": type_to_element}, fh, indent=1)


def system_to_record(s: MixtureSystem) -> dict:
    return {
        "id": s.id,
        "temperature_K": s.temperature_K,
        "conc_molal": s.conc_molal,
        "conc_molar": s.conc_molar,
        "conductivity_mS_cm": s.conductivity,
        "molecules": [
            {
                "role": g.role,
                "name": g.name,
                "w": g.w,
                "atoms": [
                    {"z": int(z), "type": int(t), "xyz": [float(c) for c in xyz]}
                    for z, t, xyz in zip(g.atom_z, g.atom_type, g.coords)
                ],
            }
            for g in s.graphs
        ],
    }


def make_split(dataset: list[MixtureSystem], spec: SplitSpec):
    """Partition the dataset; subsets are disjoint and cover the input."""
    if not dataset:
        raise ContractError("make_split: empty dataset")
    n = len(dataset)
    rng = np.random.default_rng(spec.seed)

    if spec.mode == "random":
        perm = rng.permutation(n)
        # round before flooring so 0.7 + 0.2 = 0.8999... does not lose a slot
        lo = int(math.floor(round(spec.fractions[0] * n, 6)))
        hi = int(math.floor(round((spec.fractions[0] + spec.fractions[1]) * n, 6)))
        idx_train, idx_valid, idx_test = perm[:lo], perm[lo:hi], perm[hi:]
    elif spec.mode in ("ood_conductivity", "ood_temperature"):
        thr = spec.resolved_threshold()
        if spec.mode == "ood_conductivity":
            flags = np.array([s.conductivity > thr for s in dataset])
        else:
            flags = np.array([s.temperature_K > thr for s in dataset])
        idx_test = np.flatnonzero(flags)
        rest = np.flatnonzero(~flags)
        perm = rest[rng.permutation(rest.size)]
        lo = int(math.floor(0.8 * rest.size))  # train : valid = 4 : 1
        idx_train, idx_valid = perm[:lo], perm[lo:]
    else:
        raise ContractError(f"unknown split mode '{spec.mode}'")

    subsets = tuple([dataset[i] for i in idx] for idx in (idx_train, idx_valid, idx_test))
    for name, subset in zip(("train", "valid", "test"), subsets):
        if not subset:
            raise DegenerateSplitError(f"split produced an empty {name} subset")
    return subsets


def perturb_coordinates(graph: GeometricGraph, sigma: float,
                        seed: int) -> GeometricGraph:
    """Add i.i.d. Gaussian coordinate noise on a fixed topology.

    Edges, weights and centering are deliberately not recomputed: the noise
    models conformational uncertainty, not a new molecule.
    """
    if sigma < 0:
        raise ContractError("perturb_coordinates: sigma must be >= 0")
    if sigma == 0:
        return graph
    rng = np.random.default_rng(seed)
    noisy = graph.coords + rng.normal(scale=sigma, size=graph.coords.shape)
    return replace(graph, coords=noisy)


def env_stats(systems: list[MixtureSystem]) -> tuple[np.ndarray, np.ndarray]:
    """Mean/std of the environment vectors (std floored to keep z-scores finite)."""
    env = np.stack([s.env_vector() for s in systems])
    mean = env.mean(axis=0)
    std = env.std(axis=0)
    std[std < 1e-12] = 1.0
    return mean, std
