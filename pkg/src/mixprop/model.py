"""The full mixture model: role-specific equivariant encoders, per-molecule
frames, cross-frame interaction layers, attention readout.

Systems are packed into flat node/molecule/pair arrays so a whole batch
runs through a handful of large tensor ops; a batch of one reproduces the
single-system computation exactly.  All per-atom aggregations (encoder
neighborhoods, interaction partners, covariances, pooling) go through
segment reductions that honor the engine's exact-reduction mode, which is
what the certification harness uses to assert bitwise permutation
invariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    GatherPlan,
    Tensor,
    concat,
    gather,
    reshape,
    segment_sum,
    sqrt,
    tsum,
)
from .data import ENV_DIM, MixtureSystem
from .encoder import EncoderConfig, encode_group, init_encoder, make_mol_graph_batch
from .errors import ContractError
from .frames import _complete_basis, _resolve_signs, eig3_vectors_batch
from .gin import GinConfig, PairGeometry, gin_layer, init_gin
from .nn import group_names
from .readout import HeadConfig, init_head, pool_and_predict

ROLE_SOLVENT, ROLE_SALT = 0, 1


@dataclass
class ModelConfig:
    input_dim: int
    env_dim: int = ENV_DIM
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    gin: GinConfig = field(default_factory=GinConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    frames: str = "standard"  # standard | strict
    proportion_mode: str = "append"  # append | multiply

    def __post_init__(self):
        if not (self.encoder.hidden == self.gin.hidden == self.head.hidden):
            raise ContractError("encoder/gin/head hidden dims must agree")
        if self.encoder.channels != self.gin.channels:
            raise ContractError("encoder and gin channel counts must agree")
        if self.frames not in ("standard", "strict"):
            raise ContractError(f"unknown frames mode '{self.frames}'")
        if self.proportion_mode not in ("append", "multiply"):
            raise ContractError(f"unknown proportion mode '{self.proportion_mode}'")


@dataclass
class PackedBatch:
    """Flat constant arrays for one batch; see ``MixtureModel.pack``."""

    n_systems: int
    n_molecules: int
    n_nodes: int
    node_x_clean: np.ndarray
    node_x_input: np.ndarray
    node_mol: np.ndarray
    mol_starts: np.ndarray       # (M,) node start per molecule
    mol_sizes: np.ndarray
    mol_system: np.ndarray
    mol_w: np.ndarray
    sys_mol_starts: np.ndarray   # (B,) molecule start per system
    groups: dict                 # role -> MolGraphBatch ("solvent"/"salt")
    group_index: dict            # role -> global node ids, group order
    unscramble: GatherPlan       # rows [solvent block; salt block] -> original
    pairs: PairGeometry
    env: np.ndarray              # (B, env_dim) normalized
    kappa: np.ndarray            # (B,)


@dataclass
class ForwardResult:
    prediction: Tensor            # (B,)
    denoise_norm: Tensor          # (B,) per-system Frobenius denoise distance
    node_h: Tensor | None = None  # (N, hidden)
    node_v: Tensor | None = None  # (N, C, 3)
    x_denoise: Tensor | None = None
    frames: Tensor | None = None  # (M, 3, 3)
    batch: PackedBatch | None = None


def _build_pair_geometry(node_mol, mol_system, mol_sizes, sys_node_ranges):
    n_nodes = node_mol.size
    n_sys_atoms = np.zeros(n_nodes, dtype=np.int64)
    pair_i_parts, pair_j_parts = [], []
    for lo, hi in sys_node_ranges:
        ids = np.arange(lo, hi)
        mols = node_mol[ids]
        n_sys_atoms[lo:hi] = hi - lo
        differ = mols[:, None] != mols[None, :]
        rows = np.repeat(ids, differ.sum(axis=1))
        cols = ids[np.nonzero(differ)[1]]
        pair_i_parts.append(rows)
        pair_j_parts.append(cols)
    pair_i = np.concatenate(pair_i_parts) if pair_i_parts else np.zeros(0, np.intp)
    pair_j = np.concatenate(pair_j_parts) if pair_j_parts else np.zeros(0, np.intp)

    partner_counts = (n_sys_atoms - mol_sizes[node_mol]).astype(np.int64)
    pair_starts = np.concatenate([[0], np.cumsum(partner_counts)[:-1]])
    inv_partner = np.zeros((n_nodes, 1))
    nz = partner_counts > 0
    inv_partner[nz, 0] = 1.0 / partner_counts[nz]
    multi_mask = nz.astype(np.float64).reshape(-1, 1)

    tgt_mol = node_mol[pair_i]
    src_mol = node_mol[pair_j]
    n_mol = mol_sizes.size
    pair_key = tgt_mol.astype(np.int64) * n_mol + src_mol
    uniq, inverse = np.unique(pair_key, return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    starts = np.searchsorted(inverse[order], np.arange(uniq.size))
    counts = np.diff(np.append(starts, inverse.size)).astype(np.float64)

    return PairGeometry(
        n_nodes=n_nodes, pair_i=pair_i, pair_j=pair_j, pair_starts=pair_starts,
        plan_i=GatherPlan(pair_i), plan_j=GatherPlan(pair_j),
        plan_tgt_mol=GatherPlan(tgt_mol), plan_src_mol=GatherPlan(src_mol),
        inv_partner=inv_partner, multi_mask=multi_mask,
        molpair_sort=GatherPlan(order), molpair_starts=starts,
        molpair_inv_count=(1.0 / counts).reshape(-1, 1),
        molpair_back=GatherPlan(inverse))


class MixtureModel:
    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def create(cls, cfg: ModelConfig, seed: int = 7) -> "MixtureModel":
        rng = np.random.default_rng(seed)
        params: dict[str, Tensor] = {}
        init_encoder(rng, params, "solvent_encoder", cfg.encoder, cfg.input_dim)
        init_encoder(rng, params, "salt_encoder", cfg.encoder, cfg.input_dim)
        init_gin(rng, params, cfg.gin)
        init_head(rng, params, cfg.head, cfg.env_dim)
        return cls(cfg, params)

    def parameter_groups(self) -> dict[str, list[str]]:
        return group_names(self.params)

    # -- packing ---------------------------------------------------------
    def pack(self, systems: list[MixtureSystem],
             env_mean: np.ndarray | None = None,
             env_std: np.ndarray | None = None,
             noise_sigma: float = 0.0,
             noise_rng: np.random.Generator | None = None) -> PackedBatch:
        if not systems:
            raise ContractError("pack: empty batch")
        feats, x_clean, roles, node_mol = [], [], [], []
        mol_sizes, mol_system, mol_w, mol_roles = [], [], [], []
        sys_node_ranges, sys_mol_starts = [], []
        node_off = 0
        mol_edges = []  # (role, global node offset, edges, weights)
        for b, s in enumerate(systems):
            sys_lo = node_off
            sys_mol_starts.append(len(mol_sizes))
            for g in s.graphs:
                n = g.n_atoms
                h0 = np.array(g.node_scalars)
                h0[:, 0] *= 0.1  # bring the atomic-number column to O(1)
                if self.cfg.proportion_mode == "multiply":
                    h0[:, -1] = 0.0  # proportion leaves the atomic features
                if h0.shape[1] != self.cfg.input_dim:
                    raise ContractError(
                        f"node feature dim {h0.shape[1]} != configured input "
                        f"dim {self.cfg.input_dim}")
                feats.append(h0)
                x_clean.append(g.coords)
                role = ROLE_SALT if g.role == "salt" else ROLE_SOLVENT
                roles.append(np.full(n, role))
                node_mol.append(np.full(n, len(mol_sizes)))
                mol_edges.append((role, node_off, g.edges, g.edge_weights))
                mol_sizes.append(n)
                mol_system.append(b)
                mol_w.append(g.w)
                mol_roles.append(role)
                node_off += n
            sys_node_ranges.append((sys_lo, node_off))

        feats = np.concatenate(feats, axis=0)
        x_clean = np.concatenate(x_clean, axis=0)
        roles = np.concatenate(roles)
        node_mol = np.concatenate(node_mol)
        mol_sizes = np.array(mol_sizes, dtype=np.int64)
        mol_system = np.array(mol_system, dtype=np.int64)
        mol_w = np.array(mol_w)
        mol_starts = np.concatenate([[0], np.cumsum(mol_sizes)[:-1]])

        x_input = x_clean
        if noise_sigma > 0.0:
            if noise_rng is None:
                raise ContractError("noise_sigma > 0 requires a noise_rng")
            x_input = x_clean + noise_rng.normal(scale=noise_sigma,
                                                 size=x_clean.shape)

        # role groups: encoder runs once per role with disjoint parameters
        groups, group_index = {}, {}
        order_blocks = []
        for role, name in ((ROLE_SOLVENT, "solvent"), (ROLE_SALT, "salt")):
            gsel = np.flatnonzero(roles == role)
            group_index[name] = gsel
            order_blocks.append(gsel)
            local = np.full(node_mol.size, -1, dtype=np.int64)
            local[gsel] = np.arange(gsel.size)
            er, es, ew = [], [], []
            for mrole, off, edges, weights in mol_edges:
                if mrole != role or edges.size == 0:
                    continue
                er.append(local[edges[:, 0] + off])
                es.append(local[edges[:, 1] + off])
                ew.append(weights)
            er = np.concatenate(er) if er else np.zeros(0, np.int64)
            es = np.concatenate(es) if es else np.zeros(0, np.int64)
            ew = np.concatenate(ew) if ew else np.zeros(0)
            groups[name] = make_mol_graph_batch(
                feats[gsel], x_input[gsel], er, es, ew)

        perm = np.concatenate(order_blocks)
        inv_perm = np.empty_like(perm)
        inv_perm[perm] = np.arange(perm.size)

        env = np.stack([s.env_vector() for s in systems])
        if env_mean is not None:
            env = (env - env_mean) / env_std
        kappa = np.array([s.conductivity for s in systems])

        return PackedBatch(
            n_systems=len(systems), n_molecules=mol_sizes.size,
            n_nodes=node_mol.size, node_x_clean=x_clean, node_x_input=x_input,
            node_mol=node_mol, mol_starts=mol_starts, mol_sizes=mol_sizes,
            mol_system=mol_system, mol_w=mol_w,
            sys_mol_starts=np.array(sys_mol_starts, dtype=np.int64),
            groups=groups, group_index=group_index,
            unscramble=GatherPlan(inv_perm),
            pairs=_build_pair_geometry(node_mol, mol_system, mol_sizes,
                                       sys_node_ranges),
            env=env, kappa=kappa)

    # -- forward ---------------------------------------------------------
    def _frames(self, x: Tensor, batch: PackedBatch) -> tuple[Tensor, np.ndarray]:
        n, m = batch.n_nodes, batch.n_molecules
        outer = reshape(x, (n, 3, 1)) * reshape(x, (n, 1, 3))
        inv_n = (1.0 / batch.mol_sizes.astype(np.float64)).reshape(m, 1, 1)
        cov = segment_sum(outer, batch.mol_starts, m) * Tensor(inv_n)
        basis_raw, lam = eig3_vectors_batch(cov)
        strict = self.cfg.frames == "strict"
        sign_keep = np.zeros((m, 1, 3))
        const_part = np.zeros((m, 3, 3))
        for k in range(m):
            lo = batch.mol_starts[k]
            hi = lo + batch.mol_sizes[k]
            basis_num, kept = _complete_basis(lam[k], basis_raw.data[k])
            signs = _resolve_signs(basis_num, x.data[lo:hi], strict)
            sign_keep[k, 0] = signs * kept
            const_part[k] = basis_num * signs * ~kept
        frames = basis_raw * Tensor(sign_keep) + Tensor(const_part)
        return frames, lam

    def forward_packed(self, batch: PackedBatch,
                       rng: np.random.Generator | None = None,
                       collect: bool = False) -> ForwardResult:
        cfg = self.cfg
        outs = {}
        for name in ("solvent", "salt"):
            g = batch.groups[name]
            if g.n_nodes == 0:
                h = Tensor(np.zeros((0, cfg.encoder.hidden)))
                x = Tensor(np.zeros((0, 3)))
            else:
                h, x = encode_group(self.params, f"{name}_encoder", cfg.encoder, g)
            outs[name] = (h, x)
        h = gather(concat([outs["solvent"][0], outs["salt"][0]], axis=0),
                   batch.unscramble)
        x = gather(concat([outs["solvent"][1], outs["salt"][1]], axis=0),
                   batch.unscramble)
        x_denoise = x

        frames, lam = self._frames(x, batch)
        v = Tensor(np.zeros((batch.n_nodes, cfg.gin.channels, 3)))
        for l in range(cfg.gin.layers):
            h, v = gin_layer(self.params, f"gin.layer{l}", cfg.gin, h, x, v,
                             frames, batch.pairs)

        inv_sizes = (1.0 / batch.mol_sizes.astype(np.float64)).reshape(-1, 1)
        mol_emb = segment_sum(h, batch.mol_starts, batch.n_molecules) * Tensor(inv_sizes)
        if cfg.proportion_mode == "multiply":
            mol_emb = mol_emb * Tensor(batch.mol_w.reshape(-1, 1))
        y = pool_and_predict(self.params, cfg.head, mol_emb, batch.mol_system,
                             batch.n_systems, batch.env, rng=rng)

        diff = x_denoise - Tensor(batch.node_x_clean)
        sq = tsum(diff * diff, axis=1, keepdims=True)
        per_mol = sqrt(segment_sum(sq, batch.mol_starts, batch.n_molecules))
        per_sys = segment_sum(per_mol, batch.sys_mol_starts, batch.n_systems)
        denoise = reshape(per_sys, (batch.n_systems,))

        if collect:
            return ForwardResult(prediction=y, denoise_norm=denoise, node_h=h,
                                 node_v=v, x_denoise=x_denoise, frames=frames,
                                 batch=batch)
        return ForwardResult(prediction=y, denoise_norm=denoise, batch=batch)

    def forward(self, systems: list[MixtureSystem],
                env_mean: np.ndarray | None = None,
                env_std: np.ndarray | None = None,
                noise_sigma: float = 0.0,
                noise_rng: np.random.Generator | None = None,
                rng: np.random.Generator | None = None,
                collect: bool = False) -> ForwardResult:
        batch = self.pack(systems, env_mean, env_std, noise_sigma, noise_rng)
        return self.forward_packed(batch, rng=rng, collect=collect)
