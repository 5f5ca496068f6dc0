"""Node -> graph -> system pooling, masked self-attention, prediction head.

Graph embeddings are node means; up to ``slot_capacity`` of them enter a
masked multi-head self-attention stack (no positional encoding - slot order
must not matter), whose unmasked outputs are averaged, concatenated with
the normalized environment vector and mapped to the scalar prediction.
Masked slots carry zero vectors and receive -1e30 attention logits, which
underflow to exactly zero weight.  The ``linear`` readout replaces the
attention stack with a plain mean of the graph embeddings.

Also hosts the proportion-vector MLP baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    GatherPlan,
    Tensor,
    bmatmul,
    concat,
    gather,
    matmul,
    reshape,
    segment_sum,
    softmax,
    transpose,
    tsum,
)
from .errors import CapacityError, ContractError
from .nn import apply_mlp, init_mlp

MASK_LOGIT = -1e30


@dataclass
class HeadConfig:
    heads: int = 4
    attention_layers: int = 3
    slot_capacity: int = 8
    readout: str = "attention"  # attention | linear
    dropout: float = 0.0
    temperature: float = 1.0
    hidden: int = 64

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ContractError("attention heads must divide the embedding dim")
        if not 0.0 <= self.dropout <= 0.1:
            raise ContractError("attention dropout must lie in [0, 0.1]")
        if self.temperature < 1.0:
            raise ContractError("attention temperature must be >= 1")
        if self.readout not in ("attention", "linear"):
            raise ContractError(f"unknown readout '{self.readout}'")


def init_head(rng, params: dict, cfg: HeadConfig, env_dim: int):
    h = cfg.hidden
    for l in range(cfg.attention_layers):
        base = f"attention.layer{l}"
        for name in ("wq", "wk", "wv", "wo"):
            params[f"{base}.{name}"] = Tensor(
                rng.normal(scale=np.sqrt(1.0 / h), size=(h, h)), requires_grad=True)
        params[f"{base}.bo"] = Tensor(np.zeros(h), requires_grad=True)
    init_mlp(rng, params, "head.mlp", [h + env_dim, h, h, 1])


def init_baseline(rng, params: dict, vocab_len: int, env_dim: int,
                  hidden: int = 64):
    init_mlp(rng, params, "baseline.mlp", [vocab_len + env_dim, hidden, hidden, 1])


def _attention_layer(params: dict, base: str, slots: Tensor, mask_add: np.ndarray,
                     cfg: HeadConfig, drop_mask: np.ndarray | None) -> Tensor:
    b, s, h = slots.shape
    nh, dh = cfg.heads, h // cfg.heads

    def project(name):
        flat = matmul(reshape(slots, (b * s, h)), params[f"{base}.{name}"])
        return transpose(reshape(flat, (b, s, nh, dh)), (0, 2, 1, 3))

    q, k, v = project("wq"), project("wk"), project("wv")
    scale = 1.0 / (cfg.temperature * np.sqrt(dh))
    logits = bmatmul(q, transpose(k, (0, 1, 3, 2))) * scale + Tensor(mask_add)
    attn = softmax(logits, axis=-1)
    if drop_mask is not None:
        attn = attn * Tensor(drop_mask)
    # explicit weighted sum keeps the key reduction order-canonical under
    # exact mode (np.matmul would fix its own summation order)
    weighted = reshape(attn, (b, nh, s, s, 1)) * reshape(v, (b, nh, 1, s, dh))
    mixed = tsum(weighted, axis=3)
    merged = reshape(transpose(mixed, (0, 2, 1, 3)), (b * s, h))
    out = matmul(merged, params[f"{base}.wo"]) + params[f"{base}.bo"]
    return slots + reshape(out, (b, s, h))


def pool_and_predict(params: dict, cfg: HeadConfig, mol_emb: Tensor,
                     mol_system: np.ndarray, n_systems: int, env: np.ndarray,
                     rng: np.random.Generator | None = None) -> Tensor:
    """Graph embeddings (M, hidden) -> predictions (n_systems,).

    ``mol_system`` maps each molecule row to its system; molecules of one
    system must be contiguous.  ``env`` is (n_systems, env_dim), already
    normalized.  ``rng`` enables attention dropout (training only).
    """
    m_counts = np.bincount(mol_system, minlength=n_systems).astype(np.float64)
    if m_counts.max(initial=0) > cfg.slot_capacity and cfg.readout == "attention":
        raise CapacityError(
            f"system has {int(m_counts.max())} molecules; slot capacity is "
            f"{cfg.slot_capacity}")
    if cfg.readout == "linear":
        starts = np.searchsorted(mol_system, np.arange(n_systems))
        total = segment_sum(mol_emb, starts, n_systems)
        sys_emb = total * Tensor((1.0 / np.maximum(m_counts, 1.0)).reshape(-1, 1))
    else:
        s = cfg.slot_capacity
        h = mol_emb.shape[1]
        dummy = mol_emb.shape[0]
        slot_index = np.full(n_systems * s, dummy, dtype=np.intp)
        starts = np.searchsorted(mol_system, np.arange(n_systems))
        for b in range(n_systems):
            cnt = int(m_counts[b])
            slot_index[b * s:b * s + cnt] = np.arange(starts[b], starts[b] + cnt)
        rows = concat([mol_emb, Tensor(np.zeros((1, h)))], axis=0)
        slots = reshape(gather(rows, GatherPlan(slot_index)), (n_systems, s, h))

        valid = (np.arange(s)[None, :] < m_counts[:, None])
        mask_add = np.where(valid, 0.0, MASK_LOGIT)[:, None, None, :]
        drop = None
        if rng is not None and cfg.dropout > 0.0:
            keep = 1.0 - cfg.dropout
            drop = (rng.random((n_systems, cfg.heads, s, s)) < keep) / keep
        for l in range(cfg.attention_layers):
            slots = _attention_layer(params, f"attention.layer{l}", slots,
                                     mask_add, cfg, drop)
        kept = slots * Tensor(valid[:, :, None].astype(np.float64))
        sys_emb = tsum(kept, axis=1) * Tensor((1.0 / m_counts).reshape(-1, 1))

    inp = concat([sys_emb, Tensor(env)], axis=1)
    y = apply_mlp(params, "head.mlp", inp, n_layers=3)
    return reshape(y, (n_systems,))


def baseline_mlp(params: dict, proportions: np.ndarray, env: np.ndarray) -> Tensor:
    """Vanilla MLP on the padded proportion vector plus the environment."""
    inp = concat([Tensor(proportions), Tensor(env)], axis=1)
    y = apply_mlp(params, "baseline.mlp", inp, n_layers=3)
    return reshape(y, (proportions.shape[0],))
