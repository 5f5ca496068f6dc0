"""Molecule registry and the pinned structure cache.

Lookup order for a conformer is: local cache, then registry download, then
toolkit embedding.  This sandbox has no network registry and no
cheminformatics toolkit on the mirror, so the shipped cache is produced by
the deterministic fallback embedder (provenance "synthetic-embed-v1"); when
RDKit is importable it is preferred automatically and the provenance says
so.  Either way the cache pins coordinates: rebuilding with the same seed
reproduces them bit for bit.

Formulas are full (hydrogens included): ethylene carbonate is C3H4O3,
ten atoms.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

ATOMIC_NUMBER = {
    "H": 1, "B": 5, "C": 6, "N": 7, "O": 8, "F": 9, "Si": 14, "P": 15,
    "S": 16, "Cl": 17, "As": 33, "Li": 3,
}
ATOMIC_WEIGHT = {
    "H": 1.008, "B": 10.81, "C": 12.011, "N": 14.007, "O": 15.999,
    "F": 18.998, "Si": 28.085, "P": 30.974, "S": 32.06, "Cl": 35.45,
    "As": 74.922, "Li": 6.94,
}

SOLVENTS = {
    "EC": {"C": 3, "H": 4, "O": 3},
    "PC": {"C": 4, "H": 6, "O": 3},
    "DMC": {"C": 3, "H": 6, "O": 3},
    "DEC": {"C": 5, "H": 10, "O": 3},
    "DME": {"C": 4, "H": 10, "O": 2},
    "DMSO": {"C": 2, "H": 6, "O": 1, "S": 1},
    "AN": {"C": 2, "H": 3, "N": 1},
    "MOEMC": {"C": 5, "H": 10, "O": 4},
    "TFP": {"C": 6, "H": 6, "F": 9, "O": 4, "P": 1},
    "EA": {"C": 4, "H": 8, "O": 2},
    "MA": {"C": 3, "H": 6, "O": 2},
    "FEC": {"C": 3, "H": 3, "F": 1, "O": 3},
    "DOL": {"C": 3, "H": 6, "O": 2},
    "2-MeTHF": {"C": 5, "H": 10, "O": 1},
    "DMM": {"C": 3, "H": 8, "O": 2},
    "Freon 11": {"C": 1, "Cl": 3, "F": 1},
    "Methylene chloride": {"C": 1, "H": 2, "Cl": 2},
    "THF": {"C": 4, "H": 8, "O": 1},
    "Toluene": {"C": 7, "H": 8},
    "Sulfolane": {"C": 4, "H": 8, "O": 2, "S": 1},
    "2-Glyme": {"C": 6, "H": 14, "O": 3},
    "3-Glyme": {"C": 8, "H": 18, "O": 4},
    "4-Glyme": {"C": 10, "H": 22, "O": 5},
    "3-Me-2-Oxazolidinone": {"C": 4, "H": 7, "N": 1, "O": 2},
    "3-MeSulfolane": {"C": 5, "H": 10, "O": 2, "S": 1},
    "Ethyldiglyme": {"C": 8, "H": 18, "O": 3},
    "DMF": {"C": 3, "H": 7, "N": 1, "O": 1},
    "Ethylbenzene": {"C": 8, "H": 10},
    "Ethylmonoglyme": {"C": 5, "H": 12, "O": 2},
    "Benzene": {"C": 6, "H": 6},
    "g-Butyrolactone": {"C": 4, "H": 6, "O": 2},
    "Cumene": {"C": 9, "H": 12},
    "Propylsulfone": {"C": 6, "H": 14, "O": 2, "S": 1},
    "Pseudocumene": {"C": 9, "H": 12},
    "TEOS": {"C": 8, "H": 20, "O": 4, "Si": 1},
    "m-Xylene": {"C": 8, "H": 10},
    "o-Xylene": {"C": 8, "H": 10},
    "EMC": {"C": 4, "H": 8, "O": 3},
}
SALTS = {
    "LiPF6": {"Li": 1, "P": 1, "F": 6},
    "LiBF4": {"Li": 1, "B": 1, "F": 4},
    "LiFSI": {"Li": 1, "F": 2, "N": 1, "O": 4, "S": 2},
    "LiTDI": {"Li": 1, "C": 6, "F": 3, "N": 4},
    "LiPDI": {"Li": 1, "C": 7, "F": 5, "N": 4},
    "LiTFSI": {"Li": 1, "C": 2, "F": 6, "N": 1, "O": 4, "S": 2},
    "LiClO4": {"Li": 1, "Cl": 1, "O": 4},
    "LiAsF6": {"Li": 1, "As": 1, "F": 6},
    "LiBOB": {"Li": 1, "B": 1, "C": 4, "O": 8},
    "LiCF3SO3": {"Li": 1, "C": 1, "F": 3, "S": 1, "O": 3},
    "LiBPFPB": {"Li": 1, "B": 1, "C": 8, "F": 10, "O": 4},
    "LiBMB": {"Li": 1, "B": 1, "C": 6, "H": 4, "O": 8},
    "LiN(CF3SO2)2": {"Li": 1, "C": 2, "F": 6, "N": 1, "O": 4, "S": 2},
}
REGISTRY = {**SOLVENTS, **SALTS}

ALIASES = {
    "ethylene carbonate": "EC",
    "propylene carbonate": "PC",
    "dimethyl carbonate": "DMC",
    "diethyl carbonate": "DEC",
    "ethyl methyl carbonate": "EMC",
    "dimethoxyethane": "DME",
    "acetonitrile": "AN",
    "tetrahydrofuran": "THF",
    "fluoroethylene carbonate": "FEC",
}

ELEMENTS = sorted(ATOMIC_NUMBER)
TYPE_INDEX = {sym: i for i, sym in enumerate(ELEMENTS)}
TYPE_TO_ELEMENT = {str(i): sym for i, sym in enumerate(ELEMENTS)}
CACHE_VERSION = 1


def molecular_weight(name: str) -> float:
    return sum(ATOMIC_WEIGHT[s] * c for s, c in REGISTRY[name].items())


def canonical_name(identifier: str) -> str | None:
    if identifier in REGISTRY:
        return identifier
    return ALIASES.get(identifier.strip().lower())


def _seed_for(name: str, seed: int) -> int:
    digest = hashlib.sha256(f"{name}:{seed}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _expand_formula(formula: dict[str, int]) -> list[str]:
    symbols = []
    for sym in sorted(formula):
        if sym != "H":
            symbols.extend([sym] * formula[sym])
    symbols.extend(["H"] * formula.get("H", 0))
    return symbols


def _synthetic_embed(name: str, formula: dict[str, int], seed: int) -> np.ndarray:
    """Deterministic pseudo-conformer: heavy-atom walk, hydrogens attached."""
    rng = np.random.default_rng(_seed_for(name, seed))
    symbols = _expand_formula(formula)
    n_heavy = sum(c for s, c in formula.items() if s != "H")
    coords = [np.zeros(3)]
    for k in range(1, len(symbols)):
        is_h = symbols[k] == "H"
        bond = 1.05 if is_h else 1.52
        anchor_pool = min(k, n_heavy) if is_h and n_heavy else k
        for _ in range(40):
            base = coords[int(rng.integers(0, anchor_pool))]
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            cand = base + bond * direction + rng.normal(scale=0.06, size=3)
            if min(np.linalg.norm(cand - c) for c in coords) > 0.8:
                break
        coords.append(cand)
    xyz = np.stack(coords)
    xyz = (xyz - xyz.mean(axis=0)) * np.array([1.1, 1.0, 0.92])
    return xyz - xyz.mean(axis=0)


def _rdkit_embed(name: str, formula: dict[str, int], seed: int):
    """Embed via RDKit when available; returns None when it is not."""
    try:
        from rdkit import Chem  # noqa: F401
        from rdkit.Chem import AllChem
    except ImportError:
        return None
    smiles = SMILES.get(name)
    if smiles is None:
        return None
    mol = Chem.MolFromSmiles(smiles)
    if mol is None:
        return None
    mol = Chem.AddHs(mol)
    if AllChem.EmbedMolecule(mol, randomSeed=seed) != 0:
        return None
    conf = mol.GetConformer()
    xyz = np.array([[conf.GetAtomPosition(i).x, conf.GetAtomPosition(i).y,
                     conf.GetAtomPosition(i).z] for i in range(mol.GetNumAtoms())])
    symbols = [a.GetSymbol() for a in mol.GetAtoms()]
    return symbols, xyz - xyz.mean(axis=0)


SMILES = {
    "EC": "C1COC(=O)O1",
    "PC": "CC1COC(=O)O1",
    "DMC": "COC(=O)OC",
    "DEC": "CCOC(=O)OCC",
    "EMC": "CCOC(=O)OC",
    "DME": "COCCOC",
    "AN": "CC#N",
    "THF": "C1CCOC1",
    "FEC": "C1OC(=O)OC1F",
}


def build_cache(path, seed: int = 7) -> dict:
    """Embed every registry molecule and pin the result to ``path``."""
    molecules = {}
    for name, formula in REGISTRY.items():
        embedded = _rdkit_embed(name, formula, seed)
        if embedded is not None:
            symbols, xyz = embedded
            provenance = "rdkit-etkdg"
        else:
            symbols = _expand_formula(formula)
            xyz = _synthetic_embed(name, formula, seed)
            provenance = "synthetic-embed-v1"
        molecules[name] = {
            "elements": symbols,
            "xyz": [[float(v) for v in row] for row in xyz],
            "provenance": provenance,
        }
    cache = {"version": CACHE_VERSION, "seed": seed,
             "type_to_element": TYPE_TO_ELEMENT, "molecules": molecules}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cache, fh)
    return cache


def load_cache(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        cache = json.load(fh)
    if cache.get("version") != CACHE_VERSION:
        raise ValueError(f"unsupported cache version {cache.get('version')}")
    return cache
