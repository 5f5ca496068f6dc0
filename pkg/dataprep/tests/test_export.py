"""Raw-table synthesis and canonical export, at reduced scale."""

import csv
import json

import pytest

from mixprep import ExportError
from mixprep.export import export_canonical
from mixprep.rawgen import calisol_rows, diffmix_rows, write_raw
from mixprep.structures import build_cache, load_cache


@pytest.fixture(scope="module")
def cache(tmp_path_factory):
    path = tmp_path_factory.mktemp("cache") / "structures.json"
    build_cache(path, seed=7)
    return load_cache(path)


def test_calisol_row_counts_small():
    rows = calisol_rows(seed=3, n_valid=200, n_incomplete=20, ood_above=0)
    assert len(rows) == 220
    missing = sum(1 for r in rows
                  if r["temperature_K"] == "" or r["conductivity_mS_cm"] == ""
                  or all(r[c] in (0.0, "") for c in rows[0]
                         if c not in ("id", "temperature_K",
                                      "conductivity_mS_cm", "salt",
                                      "conc_molal", "conc_molar")))
    assert missing == 20


def test_diffmix_rows_grid():
    rows = diffmix_rows(seed=3, n_rows=500)
    assert len(rows) == 500
    for r in rows[:50]:
        fracs = [r[c] for c in ("EC", "PC", "FEC", "EMC", "DEC", "DMC")]
        assert abs(sum(fracs) - 1.0) < 1e-12
        assert sum(1 for f in fracs if f > 0) <= 3
        assert r["conc_molal"] in (0.025, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)


def test_export_small_roundtrip(tmp_path, cache):
    raw = write_raw("calisol", tmp_path / "raw.csv", seed=5,
                    n_valid=120, n_incomplete=15, ood_above=0)
    report = export_canonical(raw, cache, tmp_path / "canon", seed=7)
    assert report["written"] == 120
    assert report["dropped_total"] == 15

    out = tmp_path / "canon" / "calisol.jsonl"
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 120
    rec = json.loads(lines[0])
    assert set(rec) == {"id", "temperature_K", "conc_molal", "conc_molar",
                        "conductivity_mS_cm", "molecules"}
    total_w = sum(m["w"] for m in rec["molecules"])
    assert abs(total_w - 1.0) < 1e-9
    roles = {m["role"] for m in rec["molecules"]}
    assert roles == {"salt", "solvent"}

    meta = json.loads((tmp_path / "canon" / "meta.json").read_text())
    assert len(meta["type_to_element"]) == 12
    assert meta["provenance"]


def test_row_missing_conductivity_dropped(tmp_path, cache):
    raw = tmp_path / "raw.csv"
    with open(raw, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["id", "temperature_K",
                                           "conductivity_mS_cm", "salt",
                                           "conc_molal", "conc_molar", "EC"])
        w.writeheader()
        w.writerow({"id": "a", "temperature_K": 300.0,
                    "conductivity_mS_cm": 5.0, "salt": "LiPF6",
                    "conc_molal": 1.0, "conc_molar": "", "EC": 1.0})
        w.writerow({"id": "b", "temperature_K": 300.0,
                    "conductivity_mS_cm": "", "salt": "LiPF6",
                    "conc_molal": 1.0, "conc_molar": "", "EC": 1.0})
    report = export_canonical(raw, cache, tmp_path / "out", seed=7)
    assert report["written"] == 1
    assert report["dropped"]["conductivity"] == 1


def test_zero_valid_rows_errors(tmp_path, cache):
    raw = tmp_path / "raw.csv"
    with open(raw, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["id", "temperature_K",
                                           "conductivity_mS_cm", "salt",
                                           "conc_molal", "conc_molar", "EC"])
        w.writeheader()
        w.writerow({"id": "a", "temperature_K": "",
                    "conductivity_mS_cm": 5.0, "salt": "LiPF6",
                    "conc_molal": 1.0, "conc_molar": "", "EC": 1.0})
    with pytest.raises(ExportError):
        export_canonical(raw, cache, tmp_path / "out", seed=7)
