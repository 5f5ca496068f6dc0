"""Intramolecular equivariant encoding with a multi-channel EGNN stack.

Coordinates are lifted to C replicated channels at the input; every layer
computes edge messages from invariant quantities (features, per-channel
squared distances, the edge length), moves each channel along gated
relative-position differences, mixes channels with a learned CxC matrix
applied to the update, and refreshes node features from aggregated
messages.  The averaged channels at the output serve both as the denoised
coordinates and as the geometry handed to the interaction stack.

Solvents and salts use disjoint parameter sets selected by role.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    GatherPlan,
    Tensor,
    concat,
    gather,
    matmul,
    reshape,
    segment_sum,
    tmean,
    transpose,
    tsum,
)
from .errors import ContractError
from .nn import apply_linear, apply_mlp, init_linear, init_mlp


@dataclass
class EncoderConfig:
    layers: int = 4
    hidden: int = 64
    channels: int = 8

    def __post_init__(self):
        if self.layers < 1 or self.channels < 1:
            raise ContractError("encoder needs layers >= 1 and channels >= 1")


@dataclass
class MolGraphBatch:
    """One role group of molecules, packed into flat node/edge arrays.

    Edges are directed (both ways present) and sorted by receiving node;
    ``edge_starts[i]:edge_starts[i+1]`` are the edges received by node i.
    """

    n_nodes: int
    features: np.ndarray      # (N, F_in)
    coords: np.ndarray        # (N, 3)
    edge_recv: np.ndarray     # (E,)
    edge_send: np.ndarray     # (E,)
    edge_weight: np.ndarray   # (E, 1)
    edge_starts: np.ndarray   # (N,)
    recv_plan: GatherPlan
    send_plan: GatherPlan
    inv_degree: np.ndarray    # (N, 1, 1), 1/max(deg, 1)


def make_mol_graph_batch(features, coords, edge_recv, edge_send,
                         edge_weight) -> MolGraphBatch:
    n = features.shape[0]
    order = np.argsort(edge_recv, kind="stable")
    edge_recv = np.asarray(edge_recv)[order]
    edge_send = np.asarray(edge_send)[order]
    edge_weight = np.asarray(edge_weight)[order].reshape(-1, 1)
    starts = np.searchsorted(edge_recv, np.arange(n))
    deg = np.diff(np.append(starts, edge_recv.size)).astype(np.float64)
    return MolGraphBatch(
        n_nodes=n, features=np.asarray(features, dtype=np.float64),
        coords=np.asarray(coords, dtype=np.float64),
        edge_recv=edge_recv, edge_send=edge_send, edge_weight=edge_weight,
        edge_starts=starts,
        recv_plan=GatherPlan(edge_recv), send_plan=GatherPlan(edge_send),
        inv_degree=(1.0 / np.maximum(deg, 1.0)).reshape(-1, 1, 1))


def init_encoder(rng, params: dict, prefix: str, cfg: EncoderConfig,
                 input_dim: int):
    h, c = cfg.hidden, cfg.channels
    init_linear(rng, params, f"{prefix}.proj", input_dim, h)
    for l in range(cfg.layers):
        base = f"{prefix}.layer{l}"
        init_mlp(rng, params, f"{base}.edge", [2 * h + c + 1, h, h])
        init_mlp(rng, params, f"{base}.coord", [h, h, c], final_scale=1e-2)
        init_mlp(rng, params, f"{base}.node", [2 * h, h, h])
        params[f"{base}.mix"] = Tensor(np.eye(c) + rng.normal(scale=1e-2, size=(c, c)),
                                       requires_grad=True)


def egnn_layer(params: dict, base: str, h: Tensor, xc: Tensor,
               g: MolGraphBatch, channels: int) -> tuple[Tensor, Tensor]:
    """One message-passing layer: returns updated (h, multi-channel coords).

    With an empty edge set the coordinates pass through unchanged and the
    node update sees a zero message.
    """
    n = g.n_nodes
    h_i = gather(h, g.recv_plan)
    h_j = gather(h, g.send_plan)
    x_i = gather(xc, g.recv_plan)
    x_j = gather(xc, g.send_plan)
    diff = x_i - x_j                                # (E, C, 3)
    sqdist = tsum(diff * diff, axis=2)              # (E, C)

    msg = apply_mlp(params, f"{base}.edge",
                    concat([h_i, h_j, sqdist, Tensor(g.edge_weight)], axis=1),
                    n_layers=2, final_activation=True)

    gate = apply_mlp(params, f"{base}.coord", msg, n_layers=2)  # (E, C)
    moved = diff * reshape(gate, (gate.shape[0], channels, 1))
    delta = segment_sum(moved, g.edge_starts, n) * Tensor(g.inv_degree)
    # channel mix acts on the update so translations cannot leak through it
    flat = reshape(transpose(delta, (0, 2, 1)), (n * 3, channels))
    mixed = transpose(reshape(matmul(flat, transpose(params[f"{base}.mix"])),
                              (n, 3, channels)), (0, 2, 1))
    xc = xc + mixed

    # mean aggregation (like the coordinate path) keeps activations O(1)
    # through the residual stack regardless of graph density
    agg = segment_sum(msg, g.edge_starts, n) * Tensor(g.inv_degree[:, :, 0])
    h = h + apply_mlp(params, f"{base}.node", concat([h, agg], axis=1), n_layers=2)
    return h, xc


def encode_group(params: dict, prefix: str, cfg: EncoderConfig,
                 g: MolGraphBatch) -> tuple[Tensor, Tensor]:
    """Encode one role group; returns (H_enc, X_out) with X_out (N, 3) being
    the channel average used both as denoised coordinates and as the
    geometry entering the interaction stack."""
    h = apply_linear(params, f"{prefix}.proj", Tensor(g.features))
    lifted = np.repeat(g.coords[:, None, :], cfg.channels, axis=1)
    xc = Tensor(lifted)
    for l in range(cfg.layers):
        h, xc = egnn_layer(params, f"{prefix}.layer{l}", h, xc, g, cfg.channels)
    x_out = tmean(xc, axis=1)
    return h, x_out
