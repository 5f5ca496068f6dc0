"""Conformer resolution: cache first, then registry download, then toolkit.

The registry step is a hook for an online structure service; in offline
environments it reports itself unavailable and resolution falls through to
toolkit embedding.  Every returned conformer is deterministic given
(identifier, seed).
"""

from __future__ import annotations

import numpy as np

from . import LookupFailure
from .structures import (
    ATOMIC_NUMBER,
    REGISTRY,
    TYPE_INDEX,
    _rdkit_embed,
    _expand_formula,
    _synthetic_embed,
    canonical_name,
)


def generate_conformer(identifier: str, cache: dict | None = None,
                       seed: int = 7, registry_fetch=None) -> list[tuple]:
    """Resolve ``identifier`` to a centered atom list [(z, type, xyz), ...].

    ``registry_fetch`` may be a callable(name) -> (symbols, xyz) implementing
    a structure-registry download; by default none is available.
    """
    if not identifier or not identifier.strip():
        raise LookupFailure("empty molecule identifier (sources tried: none)")
    attempted = []

    name = canonical_name(identifier)
    if cache is not None and name is not None:
        entry = cache["molecules"].get(name)
        if entry is not None:
            xyz = np.asarray(entry["xyz"], dtype=np.float64)
            return _pack(entry["elements"], xyz)
        attempted.append("local cache (miss)")
    elif cache is not None:
        attempted.append("local cache (unknown name)")
    else:
        attempted.append("local cache (not provided)")

    if registry_fetch is not None and name is not None:
        fetched = registry_fetch(name)
        if fetched is not None:
            symbols, xyz = fetched
            xyz = np.asarray(xyz, dtype=np.float64)
            return _pack(symbols, xyz - xyz.mean(axis=0))
        attempted.append("structure registry (no entry)")
    else:
        attempted.append("structure registry (unavailable)")

    if name is not None:
        formula = REGISTRY[name]
        embedded = _rdkit_embed(name, formula, seed)
        if embedded is not None:
            symbols, xyz = embedded
            return _pack(symbols, xyz)
        return _pack(_expand_formula(formula),
                     _synthetic_embed(name, formula, seed))
    attempted.append("toolkit embedding (unresolvable identifier)")

    raise LookupFailure(
        f"could not resolve {identifier!r}; sources tried: "
        + "; ".join(attempted))


def _pack(symbols, xyz) -> list[tuple]:
    return [(ATOMIC_NUMBER[s], TYPE_INDEX[s],
             [float(v) for v in p]) for s, p in zip(symbols, xyz)]
