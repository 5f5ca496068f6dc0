"""Deterministic synthetic electrolyte corpora in the canonical format.

Real conductivity tables cannot be redistributed with this package, so the
test and acceptance suites run on synthetic stand-ins that reproduce the
published corpus statistics: 13,269 valid CALiSol-like records (of which
exactly 1,244 exceed the 10 mS/cm OOD threshold) over 13 salts and 38
solvents, and 24,822 DiffMix-like records over 2 salts and 6 carbonates
with seven molality levels.  Conductivities follow a smooth deterministic
law (Arrhenius temperature factor, single-peak concentration response,
structure-dependent solvent/salt quality with a salt-solvent cross term)
plus mild lognormal noise, so models that exploit composition, conditions
and geometry can fit them while pure-proportion baselines underfit.

Molecule geometries are deterministic pseudo-conformers: formula-correct
atom sets embedded as anisotropic blobs with bond-scale spacing.  They are
stand-ins, not chemistry - sufficient for exercising distance cutoffs,
frames and message passing.

Usage: ``python3 -m mixprop.synth --dataset calisol --out DIR [--rows N]``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from pathlib import Path

import numpy as np

from .data import OOD_CONDUCTIVITY_THRESHOLD

CALISOL_ROWS = 13269
CALISOL_OOD_TEST = 1244
DIFFMIX_ROWS = 24822

ATOMIC_NUMBER = {
    "H": 1, "B": 5, "C": 6, "N": 7, "O": 8, "F": 9, "Si": 14, "P": 15,
    "S": 16, "Cl": 17, "As": 33, "Li": 3,
}
ATOMIC_WEIGHT = {
    "H": 1.008, "B": 10.81, "C": 12.011, "N": 14.007, "O": 15.999,
    "F": 18.998, "Si": 28.085, "P": 30.974, "S": 32.06, "Cl": 35.45,
    "As": 74.922, "Li": 6.94,
}
HETERO = {"N", "O", "F", "S", "P", "Cl"}

# formula tables; compositions are plausible stand-ins for the named species
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

# mild skew toward the carbonate workhorses; rare species stay well covered
CALISOL_SOLVENT_WEIGHTS = {name: (2.0 if name in (
    "EC", "PC", "DMC", "DEC", "DME", "THF", "MA", "EA", "FEC", "DOL") else 1.0)
    for name in SOLVENTS if name != "EMC"}
CALISOL_SALT_WEIGHTS = {name: (3.0 if name == "LiPF6" else
                               2.0 if name in ("LiBF4", "LiTFSI", "LiClO4") else 1.0)
                        for name in SALTS}
DIFFMIX_SOLVENTS = ["EC", "PC", "FEC", "EMC", "DEC", "DMC"]
DIFFMIX_SALTS = ["LiPF6", "LiTFSI"]
DIFFMIX_MOLALITIES = [0.025, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]

ELEMENTS = sorted(ATOMIC_NUMBER)  # global type vocabulary, alphabetic
TYPE_INDEX = {sym: i for i, sym in enumerate(ELEMENTS)}
TYPE_TO_ELEMENT = {str(i): sym for i, sym in enumerate(ELEMENTS)}


def _name_seed(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "big")


def embed_structure(name: str, formula: dict[str, int]) -> list[dict]:
    """Deterministic pseudo-conformer: {z, type, xyz} per atom, centered.

    Hydrogens are dropped (heavy-atom graphs), which keeps desk-scale
    training budgets sane without changing any contract the corpus serves.
    """
    rng = np.random.default_rng(_name_seed(name))
    symbols = []
    for sym in sorted(formula):
        if sym != "H":
            symbols.extend([sym] * formula[sym])
    if not symbols:  # all-hydrogen edge case never occurs in the tables
        symbols = ["H"]

    coords = [np.zeros(3)]
    for k in range(1, len(symbols)):
        bond = 1.52
        for _ in range(40):
            base = coords[rng.integers(0, k)]
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            cand = base + bond * direction + rng.normal(scale=0.08, size=3)
            if min(np.linalg.norm(cand - c) for c in coords) > 0.85:
                break
        coords.append(cand)
    xyz = np.stack(coords)
    xyz = (xyz - xyz.mean(axis=0)) * np.array([1.12, 1.0, 0.9])  # break symmetry
    xyz -= xyz.mean(axis=0)
    return [{"z": ATOMIC_NUMBER[s], "type": TYPE_INDEX[s],
             "xyz": [float(v) for v in p]}
            for s, p in zip(symbols, xyz)]


class _MoleculeLibrary:
    """Structures plus the descriptors the conductivity law feeds on."""

    def __init__(self):
        self.atoms: dict[str, list] = {}
        self.rg: dict[str, float] = {}
        self.hetero: dict[str, float] = {}
        self.mw: dict[str, float] = {}
        for table in (SOLVENTS, SALTS):
            for name, formula in table.items():
                atoms = embed_structure(name, formula)
                self.atoms[name] = atoms
                xyz = np.array([a["xyz"] for a in atoms])
                self.rg[name] = float(np.sqrt((xyz ** 2).sum(axis=1).mean()))
                n = sum(formula.values())
                self.hetero[name] = sum(formula.get(s, 0) for s in HETERO) / n
                self.mw[name] = sum(ATOMIC_WEIGHT[s] * c for s, c in formula.items())


_LIBRARY: _MoleculeLibrary | None = None


def library() -> _MoleculeLibrary:
    global _LIBRARY
    if _LIBRARY is None:
        _LIBRARY = _MoleculeLibrary()
    return _LIBRARY


def jitter_structure(atoms: list[dict], rng) -> list[dict]:
    """Per-row conformer: anisotropic stretch plus atomic jitter, centered.

    Each record carries its own conformational state, and the conductivity
    law below reads geometry from it - so part of the target is only
    visible to models that consume the coordinates.
    """
    xyz = np.array([a["xyz"] for a in atoms])
    stretch = 1.0 + rng.uniform(-0.35, 0.35, size=3)
    xyz = (xyz + rng.normal(scale=0.1, size=xyz.shape)) * stretch
    xyz -= xyz.mean(axis=0)
    return [{"z": a["z"], "type": a["type"], "xyz": [float(v) for v in p]}
            for a, p in zip(atoms, xyz)]


def radius_of_gyration(atoms: list[dict]) -> float:
    xyz = np.array([a["xyz"] for a in atoms])
    xyz = xyz - xyz.mean(axis=0)
    return float(np.sqrt((xyz ** 2).sum(axis=1).mean()))


def conductivity_law(salt_atoms: list[dict], solvent_mols: list[dict],
                     solvent_fracs: np.ndarray, temperature: float,
                     molality: float, noise: float) -> float:
    """Smooth synthetic conductivity in arbitrary units (rescaled later).

    Reads composition (heteroatom shares) and per-record geometry (radii
    of gyration of the jittered conformers), with a blend-nonideality term
    over solvent pairs, so both single-molecule geometry and cross-molecule
    structure carry real signal.
    """
    lib = library()
    t_term = math.exp(-950.0 * (1.0 / temperature - 1.0 / 298.15))
    c = min(max(molality, 0.05), 3.2)
    c_term = c * math.exp(1.0 - c / 1.15)
    names = [m["name"] for m in solvent_mols]
    rgs = [radius_of_gyration(m["atoms"]) for m in solvent_mols]
    p_bar = float(sum(f * lib.hetero[n] for n, f in zip(names, solvent_fracs)))
    r_bar = float(sum(f * r for r, f in zip(rgs, solvent_fracs)))
    solv = (0.45 + 1.2 * p_bar) * (2.4 / (1.0 + 0.9 * r_bar)) ** 1.4
    n_salt = len(salt_atoms)
    rg_salt = radius_of_gyration(salt_atoms)
    salt_q = (0.55 + 1.35 * (8.0 / n_salt) ** 0.45) * (1.9 / (1.1 + rg_salt)) ** 0.8
    cross = 1.0 + 0.5 * (p_bar - 0.45) * (salt_q - 1.25)
    # blend nonideality: polar, size-matched solvent pairs conduct better
    pair = 0.0
    for j in range(len(names)):
        for k in range(j + 1, len(names)):
            match = (lib.hetero[names[j]] * lib.hetero[names[k]]
                     * 3.0 / (1.0 + 0.9 * (rgs[j] - rgs[k]) ** 2) - 0.22)
            pair += solvent_fracs[j] * solvent_fracs[k] * match
    blend = max(1.0 + 2.5 * pair, 0.15)
    return (7.5 * t_term * c_term * solv * salt_q * max(cross, 0.15) * blend
            * math.exp(0.05 * noise))


def _salt_fraction(molality: float, salt: str) -> float:
    mw = library().mw[salt]
    return molality * mw / (1000.0 + molality * mw)


def _weighted_choice(rng, names, weights):
    w = np.array([weights[n] for n in names], dtype=np.float64)
    return names[rng.choice(len(names), p=w / w.sum())]


def _build_record(idx_prefix, i, salt, salt_atoms, solvent_mols, fracs,
                  temperature, molal, molar, kappa):
    w_salt = _salt_fraction(molal if molal is not None else 0.9 * (molar or 1.0), salt)
    w_salt = min(max(w_salt, 1e-4), 0.6)
    weights = [w_salt] + [(1.0 - w_salt) * f for f in fracs]
    total = sum(weights)
    weights = [w / total for w in weights]
    molecules = [{"role": "salt", "name": salt, "w": weights[0],
                  "atoms": salt_atoms}]
    for mol, w in zip(solvent_mols, weights[1:]):
        molecules.append({"role": "solvent", "name": mol["name"], "w": w,
                          "atoms": mol["atoms"]})
    return {
        "id": f"{idx_prefix}-{i:06d}",
        "temperature_K": temperature,
        "conc_molal": molal,
        "conc_molar": molar,
        "conductivity_mS_cm": kappa,
        "molecules": molecules,
    }


def _rescale_for_ood(records: list[dict], target_above: int, threshold: float):
    """Scale conductivities so exactly ``target_above`` exceed ``threshold``."""
    kappas = np.array([r["conductivity_mS_cm"] for r in records])
    order = np.sort(kappas)[::-1]
    cut = 0.5 * (order[target_above - 1] + order[target_above])
    scale = threshold / cut
    for r in records:
        r["conductivity_mS_cm"] = float(r["conductivity_mS_cm"] * scale)


def generate_calisol(n_rows: int = CALISOL_ROWS, seed: int = 7,
                     ood_target: int | None = None) -> list[dict]:
    """CALiSol-like records; exactly CALISOL_OOD_TEST of the full corpus
    (or ``ood_target`` when given) land above the 10 mS/cm threshold."""
    rng = np.random.default_rng(seed)
    lib = library()
    solvent_pool = sorted(CALISOL_SOLVENT_WEIGHTS)
    salt_pool = sorted(CALISOL_SALT_WEIGHTS)
    records = []
    for i in range(n_rows):
        salt = _weighted_choice(rng, salt_pool, CALISOL_SALT_WEIGHTS)
        n_solv = rng.choice([1, 2, 3, 4], p=[0.3, 0.4, 0.2, 0.1])
        w = np.array([CALISOL_SOLVENT_WEIGHTS[n] for n in solvent_pool])
        idx = rng.choice(len(solvent_pool), size=n_solv, replace=False, p=w / w.sum())
        names = [solvent_pool[j] for j in idx]
        fracs = rng.dirichlet(np.full(n_solv, 2.0))
        fracs = np.clip(fracs, 0.05, None)
        fracs = fracs / fracs.sum()
        temperature = float(np.clip(rng.normal(300.0, 38.0), 194.15, 477.42))
        molality = float(np.clip(rng.lognormal(-0.15, 0.55), 0.0286, 2.37))
        conv = rng.random()
        if conv < 0.70:
            molal, molar = molality, None
            m_eff = molality
        elif conv < 0.95:
            molar = float(np.clip(molality * rng.uniform(1.0, 1.25), 0.0771, 4.0))
            molal = None
            m_eff = molar * 0.9
        else:
            molal = molality
            molar = float(np.clip(molality * rng.uniform(1.0, 1.25), 0.0771, 4.0))
            m_eff = molality
        salt_atoms = jitter_structure(lib.atoms[salt], rng)
        solvent_mols = [{"name": n, "atoms": jitter_structure(lib.atoms[n], rng)}
                        for n in names]
        kappa = conductivity_law(salt_atoms, solvent_mols, fracs, temperature,
                                 m_eff, rng.standard_normal())
        records.append(_build_record("cal", i, salt, salt_atoms, solvent_mols,
                                     fracs, temperature, molal, molar, kappa))
    target = CALISOL_OOD_TEST if ood_target is None else ood_target
    if 0 < target < n_rows:
        _rescale_for_ood(records, target, OOD_CONDUCTIVITY_THRESHOLD)
    return records


def generate_diffmix(n_rows: int = DIFFMIX_ROWS, seed: int = 7) -> list[dict]:
    """DiffMix-like grid: 2 salts x 7 molalities x (<=3 of 6 solvents in 0.2
    steps) x 11 temperatures, subsampled to the published row count."""
    rng = np.random.default_rng(seed)
    combos = []
    for parts in itertools.product(range(6), repeat=6):
        if sum(parts) == 5 and sum(1 for p in parts if p) <= 3:
            combos.append(tuple(p / 5.0 for p in parts))
    temps = np.linspace(243.15, 293.15, 11)
    grid = list(itertools.product(DIFFMIX_SALTS, DIFFMIX_MOLALITIES, combos, temps))
    if n_rows > len(grid):
        raise ValueError(f"diffmix grid holds only {len(grid)} rows")
    keep = np.sort(rng.choice(len(grid), size=n_rows, replace=False))
    lib = library()
    records = []
    for i, g in enumerate(keep):
        salt, molal, combo, temperature = grid[g]
        names = [DIFFMIX_SOLVENTS[j] for j, f in enumerate(combo) if f > 0]
        fracs = np.array([f for f in combo if f > 0])
        salt_atoms = jitter_structure(lib.atoms[salt], rng)
        solvent_mols = [{"name": n, "atoms": jitter_structure(lib.atoms[n], rng)}
                        for n in names]
        kappa = conductivity_law(salt_atoms, solvent_mols, fracs,
                                 float(temperature), molal,
                                 rng.standard_normal())
        records.append(_build_record("dm", i, salt, salt_atoms, solvent_mols,
                                     fracs, float(temperature), molal, None,
                                     kappa))
    return records


def write_corpus(dataset: str, out_dir, n_rows: int | None = None,
                 seed: int = 7) -> Path:
    """Write ``<dataset>.jsonl`` plus ``meta.json``; returns the data path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if dataset == "calisol":
        records = generate_calisol(n_rows or CALISOL_ROWS, seed=seed,
                                   ood_target=None if n_rows in (None, CALISOL_ROWS)
                                   else 0)
    elif dataset == "diffmix":
        records = generate_diffmix(n_rows or DIFFMIX_ROWS, seed=seed)
    else:
        raise ValueError(f"unknown dataset '{dataset}'")
    path = out_dir / f"{dataset}.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
    with open(out_dir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump({"type_to_element": TYPE_TO_ELEMENT, "dataset": dataset,
                   "generator": "synthetic-corpus-v1", "seed": seed}, fh, indent=1)
    return path


def main(argv=None):
    import argparse

    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dataset", choices=("calisol", "diffmix"), required=True)
    ap.add_argument("--out", required=True)
    ap.add_argument("--rows", type=int, default=None)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)
    path = write_corpus(args.dataset, args.out, n_rows=args.rows, seed=args.seed)
    print(path)


if __name__ == "__main__":
    main()
