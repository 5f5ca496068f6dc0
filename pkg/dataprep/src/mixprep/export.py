"""Raw CSV rows + structure cache -> canonical JSON-lines + meta.json.

Rows missing a required field (temperature, conductivity, composition, or
both concentration values) are dropped and counted.  Proportions are
normalized to sum to one: the salt's share comes from its molality and
molar mass (w = m*M / (1000 + m*M) per kilogram of solvent), rows carrying
only a molar concentration use a nominal unit solution density, and the
solvent remainder is distributed by the raw fractions.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from . import ExportError, LookupFailure
from .conformers import generate_conformer
from .structures import TYPE_TO_ELEMENT, molecular_weight


def _parse_float(value) -> float | None:
    if value is None or value == "":
        return None
    try:
        out = float(value)
    except (TypeError, ValueError):
        return None
    return out if math.isfinite(out) else None


def export_canonical(raw_csv, cache: dict, out_dir, dataset: str = "calisol",
                     seed: int = 7) -> dict:
    """Convert one raw CSV; returns a filter/provenance report."""
    raw_csv = Path(raw_csv)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"{dataset}.jsonl"

    with open(raw_csv, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        solvent_cols = [c for c in reader.fieldnames
                        if c not in ("id", "temperature_K",
                                     "conductivity_mS_cm", "salt",
                                     "conc_molal", "conc_molar")]
        rows = list(reader)

    conformers: dict[str, list] = {}

    def atoms_for(name: str):
        if name not in conformers:
            conformers[name] = [
                {"z": z, "type": t, "xyz": xyz}
                for z, t, xyz in generate_conformer(name, cache=cache, seed=seed)]
        return conformers[name]

    written = 0
    dropped = {"temperature": 0, "conductivity": 0, "composition": 0,
               "concentration": 0, "unknown_molecule": 0}
    with open(out_path, "w", encoding="utf-8") as out:
        for row in rows:
            temperature = _parse_float(row.get("temperature_K"))
            kappa = _parse_float(row.get("conductivity_mS_cm"))
            molal = _parse_float(row.get("conc_molal"))
            molar = _parse_float(row.get("conc_molar"))
            if temperature is None:
                dropped["temperature"] += 1
                continue
            if kappa is None:
                dropped["conductivity"] += 1
                continue
            if molal is None and molar is None:
                dropped["concentration"] += 1
                continue
            fractions = [(c, _parse_float(row.get(c)) or 0.0)
                         for c in solvent_cols]
            fractions = [(c, f) for c, f in fractions if f > 0.0]
            if not fractions:
                dropped["composition"] += 1
                continue
            salt = (row.get("salt") or "").strip()
            try:
                salt_atoms = atoms_for(salt)
                solvent_atoms = {c: atoms_for(c) for c, _ in fractions}
            except LookupFailure:
                dropped["unknown_molecule"] += 1
                continue

            m_eff = molal if molal is not None else molar * 0.9
            mw = molecular_weight(salt)
            w_salt = m_eff * mw / (1000.0 + m_eff * mw)
            w_salt = min(max(w_salt, 1e-4), 0.6)
            total_frac = sum(f for _, f in fractions)
            weights = [w_salt] + [(1.0 - w_salt) * f / total_frac
                                  for _, f in fractions]
            norm = sum(weights)
            weights = [w / norm for w in weights]

            molecules = [{"role": "salt", "name": salt, "w": weights[0],
                          "atoms": salt_atoms}]
            for (name, _), w in zip(fractions, weights[1:]):
                molecules.append({"role": "solvent", "name": name, "w": w,
                                  "atoms": solvent_atoms[name]})
            record = {
                "id": row.get("id") or f"{dataset}-{written:06d}",
                "temperature_K": temperature,
                "conc_molal": molal,
                "conc_molar": molar,
                "conductivity_mS_cm": kappa,
                "molecules": molecules,
            }
            out.write(json.dumps(record) + "\n")
            written += 1

    if written == 0:
        out_path.unlink(missing_ok=True)
        raise ExportError(f"no valid rows in {raw_csv}")

    with open(out_dir / "meta.json", "w", encoding="utf-8") as fh:
        json.dump({"type_to_element": TYPE_TO_ELEMENT, "dataset": dataset,
                   "source": str(raw_csv), "seed": seed,
                   "provenance": sorted({m["provenance"] for m in
                                         cache["molecules"].values()})},
                  fh, indent=1)

    report = {"written": written, "dropped": dropped,
              "dropped_total": sum(dropped.values()), "out": str(out_path)}
    with open(out_dir / "export_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
    return report
