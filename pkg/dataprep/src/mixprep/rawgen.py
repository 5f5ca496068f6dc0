"""Synthetic raw electrolyte tables in the published CSV shapes.

The measured tables cannot be redistributed, so this module synthesizes
deterministic stand-ins reproducing their reported statistics: the
CALiSol-shaped table has 13,825 rows of which 556 are incomplete (missing
temperature, conductivity or composition) leaving 13,269 valid ones, with
exactly 1,244 valid rows above 10 mS/cm; the DiffMix-shaped table holds
24,822 grid formulations over two salts, seven molalities and up to three
of six carbonates in 0.2 mass-fraction steps.

Conductivities follow a smooth law over temperature, concentration and
composition descriptors, with mild lognormal noise.
"""

from __future__ import annotations

import csv
import itertools
import math
from pathlib import Path

import numpy as np

from .structures import REGISTRY, SALTS, SOLVENTS, molecular_weight

CALISOL_VALID = 13269
CALISOL_INCOMPLETE = 556
CALISOL_OOD_ABOVE_10 = 1244
DIFFMIX_ROWS = 24822

CALISOL_SOLVENTS = sorted(n for n in SOLVENTS if n != "EMC")
CALISOL_SALTS = sorted(SALTS)
DIFFMIX_SOLVENTS = ["EC", "PC", "FEC", "EMC", "DEC", "DMC"]
DIFFMIX_SALTS = ["LiPF6", "LiTFSI"]
DIFFMIX_MOLALITIES = [0.025, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]

_COMMON = {"EC", "PC", "DMC", "DEC", "DME", "THF", "MA", "EA", "FEC", "DOL"}


def _descriptors():
    """Size and heteroatom-share proxies per molecule, from formulas."""
    hetero_set = {"N", "O", "F", "S", "P", "Cl"}
    rg, het = {}, {}
    for name, formula in REGISTRY.items():
        n = sum(formula.values())
        heavy = sum(c for s, c in formula.items() if s != "H")
        rg[name] = 0.9 * heavy ** 0.55
        het[name] = sum(formula.get(s, 0) for s in hetero_set) / n
    return rg, het


_RG, _HET = _descriptors()


def conductivity_law(salt, names, fracs, temperature, molality, noise):
    t_term = math.exp(-950.0 * (1.0 / temperature - 1.0 / 298.15))
    c = min(max(molality, 0.05), 3.2)
    c_term = c * math.exp(1.0 - c / 1.15)
    p_bar = float(sum(f * _HET[n] for n, f in zip(names, fracs)))
    r_bar = float(sum(f * _RG[n] for n, f in zip(names, fracs)))
    solv = (0.45 + 1.2 * p_bar) * (2.2 / (1.3 + 0.6 * r_bar))
    n_salt = sum(REGISTRY[salt].values())
    salt_q = 0.55 + 1.35 * (8.0 / n_salt) ** 0.45
    pair = 0.0
    for j in range(len(names)):
        for k in range(j + 1, len(names)):
            match = (_HET[names[j]] * _HET[names[k]]
                     * 2.0 / (1.0 + (_RG[names[j]] - _RG[names[k]]) ** 2) - 0.12)
            pair += fracs[j] * fracs[k] * match
    blend = max(1.0 + 1.4 * pair, 0.2)
    return (7.5 * t_term * c_term * solv * salt_q * blend
            * math.exp(0.07 * noise))


def calisol_rows(seed: int = 7, n_valid: int = CALISOL_VALID,
                 n_incomplete: int = CALISOL_INCOMPLETE,
                 ood_above: int | None = None):
    """Rows as dicts keyed by CSV column; incomplete rows interleaved."""
    rng = np.random.default_rng(seed)
    weights = np.array([8.0 if n in _COMMON else 1.0 for n in CALISOL_SOLVENTS])
    weights = weights / weights.sum()
    salt_w = np.array([10.0 if s == "LiPF6" else
                       4.0 if s in ("LiBF4", "LiTFSI", "LiClO4") else 1.0
                       for s in CALISOL_SALTS])
    salt_w = salt_w / salt_w.sum()

    valid = []
    for i in range(n_valid):
        salt = CALISOL_SALTS[rng.choice(len(CALISOL_SALTS), p=salt_w)]
        n_solv = rng.choice([1, 2, 3, 4], p=[0.3, 0.4, 0.2, 0.1])
        idx = rng.choice(len(CALISOL_SOLVENTS), size=n_solv, replace=False,
                         p=weights)
        names = [CALISOL_SOLVENTS[j] for j in idx]
        fracs = np.clip(rng.dirichlet(np.full(n_solv, 2.0)), 0.05, None)
        fracs = fracs / fracs.sum()
        temperature = float(np.clip(rng.normal(300.0, 38.0), 194.15, 477.42))
        molality = float(np.clip(rng.lognormal(-0.15, 0.55), 0.0286, 2.37))
        conv = rng.random()
        molal = molality if conv < 0.70 or conv >= 0.95 else ""
        molar = ""
        if conv >= 0.70:
            molar = float(np.clip(molality * rng.uniform(1.0, 1.25),
                                  0.0771, 4.0))
        m_eff = molality if molal != "" else float(molar) * 0.9
        kappa = conductivity_law(salt, names, fracs, temperature, m_eff,
                                 rng.standard_normal())
        row = {"id": f"raw-{i:06d}", "temperature_K": temperature,
               "conductivity_mS_cm": kappa, "salt": salt,
               "conc_molal": molal, "conc_molar": molar}
        for name in CALISOL_SOLVENTS:
            row[name] = 0.0
        for name, f in zip(names, fracs):
            row[name] = float(f)
        valid.append(row)

    if ood_above is None:
        ood_above = CALISOL_OOD_ABOVE_10 if n_valid == CALISOL_VALID else 0
    if 0 < ood_above < n_valid:
        kappas = np.sort(np.array([r["conductivity_mS_cm"] for r in valid]))[::-1]
        cut = 0.5 * (kappas[ood_above - 1] + kappas[ood_above])
        scale = 10.0 / cut
        for r in valid:
            r["conductivity_mS_cm"] = float(r["conductivity_mS_cm"] * scale)

    incomplete = []
    for k in range(n_incomplete):
        base = dict(valid[int(rng.integers(0, len(valid)))])
        base["id"] = f"raw-x{k:05d}"
        drop = rng.random()
        if drop < 0.5:
            base["conductivity_mS_cm"] = ""
        elif drop < 0.75:
            base["temperature_K"] = ""
        else:
            for name in CALISOL_SOLVENTS:
                base[name] = 0.0
        incomplete.append(base)

    rows = valid + incomplete
    order = rng.permutation(len(rows))
    return [rows[i] for i in order]


def diffmix_rows(seed: int = 7, n_rows: int = DIFFMIX_ROWS):
    rng = np.random.default_rng(seed)
    combos = [c for c in itertools.product(range(6), repeat=6)
              if sum(c) == 5 and sum(1 for p in c if p) <= 3]
    temps = np.linspace(243.15, 293.15, 11)
    grid = list(itertools.product(DIFFMIX_SALTS, DIFFMIX_MOLALITIES,
                                  combos, temps))
    if n_rows > len(grid):
        raise ValueError(f"grid holds only {len(grid)} formulations")
    keep = np.sort(rng.choice(len(grid), size=n_rows, replace=False))
    rows = []
    for i, g in enumerate(keep):
        salt, molal, combo, temperature = grid[g]
        names = [DIFFMIX_SOLVENTS[j] for j, f in enumerate(combo) if f > 0]
        fracs = np.array([f / 5.0 for f in combo if f > 0])
        kappa = conductivity_law(salt, names, fracs, float(temperature),
                                 molal, rng.standard_normal())
        row = {"id": f"dm-{i:06d}", "salt": salt, "conc_molal": molal,
               "conc_molar": "", "temperature_K": float(temperature),
               "conductivity_mS_cm": kappa}
        for j, name in enumerate(DIFFMIX_SOLVENTS):
            row[name] = combo[j] / 5.0
        rows.append(row)
    return rows


def write_csv(rows, path, solvent_columns):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = (["id", "temperature_K", "conductivity_mS_cm", "salt",
                "conc_molal", "conc_molar"] + list(solvent_columns))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
    return path


def write_raw(dataset: str, path, seed: int = 7, **kwargs):
    if dataset == "calisol":
        return write_csv(calisol_rows(seed=seed, **kwargs), path,
                         CALISOL_SOLVENTS)
    if dataset == "diffmix":
        return write_csv(diffmix_rows(seed=seed, **kwargs), path,
                         DIFFMIX_SOLVENTS)
    raise ValueError(f"unknown dataset '{dataset}'")
