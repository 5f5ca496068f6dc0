"""Intermolecular message passing through learned cross-frame transforms.

Every ordered atom pair (i in molecule m, j in molecule n, m != n of the
same system) gets a learned 3x3 matrix and translation expressed through
the two molecules' local frames:

    I_hat = F_m R_ij F_n^T,     t_vec = F_m t_ij

so a geometric message assembled in the source frame can be carried into
the target frame.  Messages are averaged over all partner atoms with the
1/(N - N_m) denominator (N = atoms in the system) and added to the per-node
equivariant features; scalar features pass through a node MLP; coordinates
are never touched.  Systems with a single molecule have no partners and the
layer is the identity on them.

Four parameterizations of R_ij are supported: ``free`` (unconstrained 3x3),
``quaternion`` (unit quaternion, proper rotation), ``sixd`` (Gram-Schmidt of
two learned vectors, proper rotation) and ``graphwise`` (pair features
pooled per molecule pair, one shared transform).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    GatherPlan,
    Tensor,
    bmatmul,
    concat,
    cross3,
    div,
    gather,
    reshape,
    segment_sum,
    transpose,
    tsum,
    vecnorm,
)
from .errors import ContractError, DegenerateRotationError
from .nn import apply_mlp, init_mlp

VARIANTS = ("free", "quaternion", "sixd", "graphwise")


@dataclass
class GinConfig:
    layers: int = 3
    variant: str = "free"
    hidden: int = 64
    channels: int = 8

    def __post_init__(self):
        if self.layers < 0:
            raise ContractError("gin layers must be >= 0")
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown transform variant '{self.variant}'")


@dataclass
class Transform:
    """Learned cross-frame transform for one directed molecule/atom pair."""

    matrix: np.ndarray       # I_hat = F_m R F_n^T
    translation: np.ndarray  # t_vec = F_m t
    raw_rotation: np.ndarray
    raw_translation: np.ndarray


@dataclass
class PairGeometry:
    """Cross-molecule pair bookkeeping for one packed batch.

    Pairs are grouped contiguously by receiving atom (``pair_starts``);
    ``molpair_*`` support the graphwise variant's per-molecule-pair pooling.
    """

    n_nodes: int
    pair_i: np.ndarray
    pair_j: np.ndarray
    pair_starts: np.ndarray      # (n_nodes,)
    plan_i: GatherPlan
    plan_j: GatherPlan
    plan_tgt_mol: GatherPlan     # pair -> target molecule row
    plan_src_mol: GatherPlan     # pair -> source molecule row
    inv_partner: np.ndarray      # (n_nodes, 1): 1/(N_sys - N_mol), 0 if lone
    multi_mask: np.ndarray       # (n_nodes, 1): 1 when the system has M >= 2
    molpair_sort: GatherPlan     # pair rows grouped by molecule pair
    molpair_starts: np.ndarray   # (Q,)
    molpair_inv_count: np.ndarray  # (Q, 1)
    molpair_back: GatherPlan     # molecule-pair row back to each pair

    @property
    def n_pairs(self) -> int:
        return self.pair_i.size


def init_gin(rng, params: dict, cfg: GinConfig):
    h, c = cfg.hidden, cfg.channels
    z_in = 2 * h + 2 + 2 * c
    rot_out, rot_bias = {
        "free": (9, np.eye(3).ravel()),
        "quaternion": (4, np.array([1.0, 0.0, 0.0, 0.0])),
        "sixd": (6, np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])),
        "graphwise": (9, np.eye(3).ravel()),
    }[cfg.variant]
    for l in range(cfg.layers):
        base = f"gin.layer{l}"
        init_mlp(rng, params, f"{base}.inv", [z_in, h, h])
        init_mlp(rng, params, f"{base}.rot", [h, h, rot_out],
                 final_scale=1e-3, final_bias=rot_bias)
        init_mlp(rng, params, f"{base}.t", [h, h, 3], final_scale=1e-3)
        init_mlp(rng, params, f"{base}.msg", [z_in + 1, h, h])
        init_mlp(rng, params, f"{base}.gate_x", [h, h, c], final_scale=1e-2)
        init_mlp(rng, params, f"{base}.gate_v", [h, h, c], final_scale=1e-2)
        init_mlp(rng, params, f"{base}.node", [2 * h, h, h])


def rotation_from_raw(raw: Tensor, variant: str) -> Tensor:
    """Map the MLP output to the (P, 3, 3) transform core."""
    p = raw.shape[0]
    if variant in ("free", "graphwise"):
        return reshape(raw, (p, 3, 3))
    if variant == "quaternion":
        norm = vecnorm(raw, axis=-1)
        if float(norm.data.min()) < 1e-12:
            raise DegenerateRotationError("quaternion norm below 1e-12")
        q = div(raw, norm)
        w, x, y, z = (q[:, 0:1], q[:, 1:2], q[:, 2:3], q[:, 3:4])
        row = [
            1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w),
            2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w),
            2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y),
        ]
        return reshape(concat(row, axis=1), (p, 3, 3))
    if variant == "sixd":
        u, v = raw[:, 0:3], raw[:, 3:6]
        e1 = div(u, vecnorm(u, axis=-1))
        w = v - e1 * tsum(e1 * v, axis=1, keepdims=True)
        e2 = div(w, vecnorm(w, axis=-1))
        e3 = cross3(e1, e2)
        cols = [reshape(e, (p, 3, 1)) for e in (e1, e2, e3)]
        return concat(cols, axis=2)
    raise ContractError(f"unknown variant '{variant}'")


def _pair_invariant_input(h, x, v, geom: PairGeometry):
    """z-features for every pair: target/source scalars plus norms."""
    nx = vecnorm(x, axis=-1)                      # (N, 1)
    nv = vecnorm(v, axis=-1, keepdims=False)      # (N, C) per-channel norms
    h_i, h_j = gather(h, geom.plan_i), gather(h, geom.plan_j)
    nx_i, nx_j = gather(nx, geom.plan_i), gather(nx, geom.plan_j)
    nv_i, nv_j = gather(nv, geom.plan_i), gather(nv, geom.plan_j)
    return concat([h_i, h_j, nx_i, nx_j, nv_i, nv_j], axis=1)


def gin_layer(params: dict, base: str, cfg: GinConfig, h: Tensor, x: Tensor,
              v: Tensor, frames: Tensor, geom: PairGeometry,
              collect_transforms: bool = False):
    """One interaction layer over a packed batch.

    ``frames`` is the (M, 3, 3) stack of molecule frames.  Returns updated
    (h, v); ``x`` is read-only here.  Optionally also returns the raw/framed
    transform tensors for certification.
    """
    n = geom.n_nodes
    if geom.n_pairs == 0:
        return (h, v, None) if collect_transforms else (h, v)

    z_in = _pair_invariant_input(h, x, v, geom)
    z = apply_mlp(params, f"{base}.inv", z_in, n_layers=2, final_activation=True)

    if cfg.variant == "graphwise":
        pooled = segment_sum(gather(z, geom.molpair_sort), geom.molpair_starts,
                             geom.molpair_starts.size) * Tensor(geom.molpair_inv_count)
        raw_r_src = apply_mlp(params, f"{base}.rot", pooled, n_layers=2)
        raw_t_src = apply_mlp(params, f"{base}.t", pooled, n_layers=2)
        raw_r = gather(raw_r_src, geom.molpair_back)
        raw_t = gather(raw_t_src, geom.molpair_back)
    else:
        raw_r = apply_mlp(params, f"{base}.rot", z, n_layers=2)
        raw_t = apply_mlp(params, f"{base}.t", z, n_layers=2)

    r = rotation_from_raw(raw_r, cfg.variant)
    f_tgt = gather(frames, geom.plan_tgt_mol)
    f_src = gather(frames, geom.plan_src_mol)
    i_hat = bmatmul(bmatmul(f_tgt, r), transpose(f_src, (0, 2, 1)))
    t_vec = reshape(bmatmul(f_tgt, reshape(raw_t, (-1, 3, 1))), (-1, 3))

    # |t_ij| equals |t_vec| because frames are orthonormal
    t_norm = vecnorm(raw_t, axis=-1)
    m_inv = apply_mlp(params, f"{base}.msg", concat([z_in, t_norm], axis=1),
                      n_layers=2, final_activation=True)

    gate_x = apply_mlp(params, f"{base}.gate_x", m_inv, n_layers=2)  # (P, C)
    gate_v = apply_mlp(params, f"{base}.gate_v", m_inv, n_layers=2)
    x_j = gather(x, geom.plan_j)                                     # (P, 3)
    v_j = gather(v, geom.plan_j)                                     # (P, C, 3)
    c = v.shape[1]
    p = geom.n_pairs
    m_src = (reshape(gate_x, (p, c, 1)) * reshape(x_j, (p, 1, 3))
             + reshape(gate_v, (p, c, 1)) * v_j)
    carried = transpose(bmatmul(i_hat, transpose(m_src, (0, 2, 1))), (0, 2, 1))
    m_geo = carried + reshape(t_vec, (p, 1, 3))

    inv_den = Tensor(geom.inv_partner)
    m_agg = segment_sum(m_inv, geom.pair_starts, n) * inv_den
    v_agg = segment_sum(m_geo, geom.pair_starts, n) * reshape(inv_den, (n, 1, 1))

    # residual form of sigma_h keeps the encoder signal intact at init
    h_new = h + apply_mlp(params, f"{base}.node", concat([h, m_agg], axis=1),
                          n_layers=2)
    # lone-molecule systems have no partners: identity, not sigma_h(h, 0)
    mask = Tensor(geom.multi_mask)
    h = h_new * mask + h * Tensor(1.0 - geom.multi_mask)
    v = v + v_agg

    if collect_transforms:
        return h, v, {"i_hat": i_hat, "t_vec": t_vec, "raw_r": r,
                      "raw_t": raw_t, "m_geo": m_geo}
    return h, v


# ---------------------------------------------------------------------------
# single-pair views of the layer internals (contract-level API)
# ---------------------------------------------------------------------------

def pair_invariants(params: dict, base: str, h_i, h_j, x_i, x_j, v_i, v_j) -> Tensor:
    """z_ij for a single cross-molecule atom pair (feature vectors in)."""
    feats = []
    for hh in (h_i, h_j):
        feats.append(reshape(Tensor(np.asarray(hh)), (1, -1)))
    for xx in (x_i, x_j):
        feats.append(vecnorm(reshape(Tensor(np.asarray(xx)), (1, 3)), axis=-1))
    for vv in (v_i, v_j):
        arr = np.asarray(vv, dtype=np.float64).reshape(1, -1, 3)
        feats.append(vecnorm(Tensor(arr), axis=-1, keepdims=False))
    z_in = concat(feats, axis=1)
    return apply_mlp(params, f"{base}.inv", z_in, n_layers=2, final_activation=True)


def build_transform(params: dict, base: str, cfg: GinConfig, z: Tensor,
                    frame_m: np.ndarray, frame_n: np.ndarray) -> Transform:
    """Materialize the Transform for one pair from its invariant features."""
    raw_r = apply_mlp(params, f"{base}.rot", z, n_layers=2)
    raw_t = apply_mlp(params, f"{base}.t", z, n_layers=2)
    r = rotation_from_raw(raw_r, cfg.variant)
    fm, fn = np.asarray(frame_m), np.asarray(frame_n)
    i_hat = fm @ r.data[0] @ fn.T
    t_vec = fm @ raw_t.data[0]
    return Transform(matrix=i_hat, translation=t_vec,
                     raw_rotation=np.array(r.data[0]),
                     raw_translation=np.array(raw_t.data[0]))


def intermolecular_message(params: dict, base: str, h_i, h_j, x_i, x_j,
                           v_i, v_j, transform: Transform):
    """Message for one pair given its Transform: returns the invariant
    vector and the (C, 3) geometric message in the target frame."""
    feats = [reshape(Tensor(np.asarray(h_i)), (1, -1)),
             reshape(Tensor(np.asarray(h_j)), (1, -1)),
             vecnorm(reshape(Tensor(np.asarray(x_i)), (1, 3)), axis=-1),
             vecnorm(reshape(Tensor(np.asarray(x_j)), (1, 3)), axis=-1)]
    v_i = np.asarray(v_i, dtype=np.float64).reshape(1, -1, 3)
    v_j = np.asarray(v_j, dtype=np.float64).reshape(1, -1, 3)
    feats.append(vecnorm(Tensor(v_i), axis=-1, keepdims=False))
    feats.append(vecnorm(Tensor(v_j), axis=-1, keepdims=False))
    t_norm = np.linalg.norm(transform.raw_translation)
    feats.append(Tensor([[t_norm]]))
    m_inv = apply_mlp(params, f"{base}.msg", concat(feats, axis=1),
                      n_layers=2, final_activation=True)
    gate_x = apply_mlp(params, f"{base}.gate_x", m_inv, n_layers=2)
    gate_v = apply_mlp(params, f"{base}.gate_v", m_inv, n_layers=2)
    c = v_j.shape[1]
    m_src = (gate_x.data.reshape(c, 1) * np.asarray(x_j).reshape(1, 3)
             + gate_v.data.reshape(c, 1) * v_j[0])
    m_geo = m_src @ transform.matrix.T + transform.translation
    return m_inv.data[0], m_geo
