"""Loss, mini-batch training loop, metrics and checkpoint I/O.

The objective follows the two-part form: mean squared error of the scalar
prediction plus gamma times the coordinate-denoising distance, where the
denoising term is the plain (unsquared) Frobenius norm per molecule summed
over molecules and averaged over the batch.  With the auxiliary objective
disabled the coordinate perturbation is skipped entirely and the loss is
plain MSE.

Training is deterministic given (seed, config, dataset): shuffling, noise
and dropout all derive from one seeded generator chain, and the history a
run writes is byte-identical across repeats.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import Tape, Tensor, no_grad
from .data import MixtureSystem, env_stats
from .encoder import EncoderConfig
from .errors import ContractError, CorrelationUndefinedError, NumericFault
from .gin import GinConfig
from .model import MixtureModel, ModelConfig
from .optim import adam_step, init_state
from .readout import HeadConfig

FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    """Run settings; model-shape fields are folded in so one flat mapping
    (config file / CLI flags) covers the whole run."""

    lr: float = 5e-5
    weight_decay: float = 1e-12
    epochs: int = 500
    batch_size: int = 128
    seed: int = 7
    gamma: float = 128.0
    noise_sigma: float = 0.3
    noisy_nodes: bool = True
    transform_variant: str = "free"
    readout: str = "attention"
    proportion_mode: str = "append"
    frames: str = "standard"
    encoder_layers: int = 4
    gin_layers: int = 3
    hidden_dim: int = 64
    channels: int = 8
    attention_heads: int = 4
    attention_layers: int = 3
    slot_capacity: int = 8
    attention_dropout: float = 0.0
    attention_temperature: float = 1.0
    log_target: bool = False

    def __post_init__(self):
        if not 0 < self.epochs <= 500:
            raise ContractError("epochs must lie in 1..500")
        if self.gamma < 0 or self.noise_sigma < 0:
            raise ContractError("gamma and noise_sigma must be >= 0")

    def model_config(self, input_dim: int, env_dim: int = 5) -> ModelConfig:
        return ModelConfig(
            input_dim=input_dim, env_dim=env_dim,
            encoder=EncoderConfig(layers=self.encoder_layers,
                                  hidden=self.hidden_dim, channels=self.channels),
            gin=GinConfig(layers=self.gin_layers, variant=self.transform_variant,
                          hidden=self.hidden_dim, channels=self.channels),
            head=HeadConfig(heads=self.attention_heads,
                            attention_layers=self.attention_layers,
                            slot_capacity=self.slot_capacity,
                            readout=self.readout,
                            dropout=self.attention_dropout,
                            temperature=self.attention_temperature,
                            hidden=self.hidden_dim),
            frames=self.frames, proportion_mode=self.proportion_mode)


@dataclass
class History:
    rows: list = field(default_factory=list)  # (epoch, train_loss, train_mse,
    #                                            train_denoise, valid_mse, valid_pearson)

    def append(self, *row):
        self.rows.append(tuple(float(v) for v in row))

    def to_csv(self) -> str:
        out = ["epoch,train_loss,train_mse,train_denoise,valid_mse,valid_pearson"]
        for r in self.rows:
            out.append(f"{int(r[0])}," + ",".join(repr(v) for v in r[1:]))
        return "\n".join(out) + "\n"


def compute_loss(model: MixtureModel, systems: list[MixtureSystem],
                 env_mean, env_std, gamma: float, noise_sigma: float,
                 noisy_nodes: bool, noise_rng=None, dropout_rng=None,
                 log_target: bool = False):
    """Batch loss: returns (total, mse_part, denoise_part) Tensors."""
    if not systems:
        raise ContractError("compute_loss: empty batch")
    sigma = noise_sigma if noisy_nodes else 0.0
    out = model.forward(systems, env_mean, env_std, noise_sigma=sigma,
                        noise_rng=noise_rng, rng=dropout_rng)
    target = out.batch.kappa
    if log_target:
        target = np.log1p(target)
    resid = out.prediction - Tensor(target)
    mse = (resid * resid).mean()
    denoise = out.denoise_norm.mean()
    if noisy_nodes and gamma > 0.0:
        total = mse + denoise * gamma
    else:
        total = mse
    return total, mse, denoise


def predict(model: MixtureModel, systems, env_mean, env_std,
            batch_size: int = 256, log_target: bool = False) -> np.ndarray:
    preds = []
    with no_grad():
        for lo in range(0, len(systems), batch_size):
            out = model.forward(systems[lo:lo + batch_size], env_mean, env_std)
            preds.append(np.array(out.prediction.data))
    y = np.concatenate(preds)
    return np.expm1(y) if log_target else y


def evaluate_metrics(predictions, targets):
    """(MSE, MAE, Pearson r, Spearman r); raises on zero variance."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1 or p.size == 0:
        raise ContractError("metrics need equal-length nonempty vectors")
    err = p - t
    mse = float(np.mean(err * err))
    mae = float(np.mean(np.abs(err)))
    pearson = _pearson(p, t)
    spearman = _pearson(_average_ranks(p), _average_ranks(t))
    return mse, mae, pearson, spearman


def _pearson(a, b) -> float:
    da, db = a - a.mean(), b - b.mean()
    va, vb = float(da @ da), float(db @ db)
    if va <= 0.0 or vb <= 0.0:
        raise CorrelationUndefinedError("zero variance: correlation undefined")
    return float((da @ db) / np.sqrt(va * vb))


def _average_ranks(x) -> np.ndarray:
    """Ranks with ties averaged (1-based, like the usual rank transform)."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size)
    sorted_x = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def train(train_systems: list[MixtureSystem], valid_systems: list[MixtureSystem],
          config: TrainConfig, type_dim: int, quiet: bool = True):
    """Best-validation training; returns (model, history, artifacts dict)."""
    if not train_systems or not valid_systems:
        raise ContractError("train/valid splits must be nonempty")
    env_mean, env_std = env_stats(train_systems)
    input_dim = 2 + type_dim
    model = MixtureModel.create(config.model_config(input_dim), seed=config.seed)
    state = init_state(model.params, lr=config.lr, weight_decay=config.weight_decay)

    master = np.random.default_rng(config.seed)
    shuffle_rng = np.random.default_rng(master.integers(2 ** 63))
    noise_rng = np.random.default_rng(master.integers(2 ** 63))
    dropout_rng = np.random.default_rng(master.integers(2 ** 63))

    targets_valid = np.array([s.conductivity for s in valid_systems])
    history = History()
    best = {"valid_mse": np.inf, "params": dict(model.params), "epoch": 0}

    n = len(train_systems)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        tot_loss = tot_mse = tot_den = 0.0
        n_batches = 0
        for lo in range(0, n, config.batch_size):
            batch = [train_systems[i] for i in order[lo:lo + config.batch_size]]
            drng = dropout_rng if config.attention_dropout > 0 else None
            try:
                total, mse, den = compute_loss(
                    model, batch, env_mean, env_std, config.gamma,
                    config.noise_sigma, config.noisy_nodes,
                    noise_rng=noise_rng, dropout_rng=drng,
                    log_target=config.log_target)
            except NumericFault as exc:
                raise NumericFault(
                    f"epoch {epoch}, batch {n_batches}: {exc}") from exc
            tape = Tape(total)
            raw = tape.gradients()
            grads = {name: raw[id(p)] for name, p in model.params.items()
                     if id(p) in raw}
            model.params, state = adam_step(model.params, grads, state)
            tot_loss += total.item()
            tot_mse += mse.item()
            tot_den += den.item()
            n_batches += 1
            del tape, raw, grads, total, mse, den

        preds = predict(model, valid_systems, env_mean, env_std,
                        batch_size=config.batch_size,
                        log_target=config.log_target)
        vmse, _, vpear, _ = evaluate_metrics(preds, targets_valid)
        history.append(epoch, tot_loss / n_batches, tot_mse / n_batches,
                       tot_den / n_batches, vmse, vpear)
        if vmse < best["valid_mse"]:
            best = {"valid_mse": vmse, "params": dict(model.params),
                    "epoch": epoch}
        if not quiet:
            print(f"epoch {epoch:4d}  loss {tot_loss / n_batches:10.4f}  "
                  f"valid mse {vmse:8.4f}  pearson {vpear:6.3f}", flush=True)

    model.params = best["params"]
    artifacts = {
        "env_mean": env_mean, "env_std": env_std, "type_dim": type_dim,
        "best_epoch": best["epoch"], "best_valid_mse": best["valid_mse"],
    }
    return model, history, artifacts


# ---------------------------------------------------------------------------
# proportion-vector MLP baseline
# ---------------------------------------------------------------------------

def molecule_vocabulary(systems) -> list[str]:
    return sorted({g.name for s in systems for g in s.graphs})


def proportion_vectors(systems, vocab: list[str]) -> np.ndarray:
    index = {name: i for i, name in enumerate(vocab)}
    out = np.zeros((len(systems), len(vocab)))
    for row, s in enumerate(systems):
        for g in s.graphs:
            col = index.get(g.name)
            if col is not None:
                out[row, col] += g.w
    return out


def train_baseline(train_systems, valid_systems, lr: float = 1e-3,
                   epochs: int = 200, batch_size: int = 128, seed: int = 7,
                   hidden: int = 64):
    """Fit the padded-proportion MLP; returns (params, vocab, stats, history).

    Mirrors the main loop's conventions (z-scored environment, Adam with
    decoupled decay, seeded shuffling, best-validation selection).
    """
    from .readout import baseline_mlp, init_baseline

    vocab = molecule_vocabulary(train_systems)
    env_mean, env_std = env_stats(train_systems)
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    init_baseline(rng, params, len(vocab), env_mean.size, hidden=hidden)
    state = init_state(params, lr=lr, weight_decay=1e-12)

    x_train = proportion_vectors(train_systems, vocab)
    e_train = (np.stack([s.env_vector() for s in train_systems]) - env_mean) / env_std
    y_train = np.array([s.conductivity for s in train_systems])
    x_valid = proportion_vectors(valid_systems, vocab)
    e_valid = (np.stack([s.env_vector() for s in valid_systems]) - env_mean) / env_std
    y_valid = np.array([s.conductivity for s in valid_systems])

    history = []
    best = {"valid_mse": np.inf, "params": dict(params)}
    n = len(train_systems)
    for epoch in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            sel = order[lo:lo + batch_size]
            pred = baseline_mlp(params, x_train[sel], e_train[sel])
            resid = pred - Tensor(y_train[sel])
            loss = (resid * resid).mean()
            raw = Tape(loss).gradients()
            grads = {k: raw[id(p)] for k, p in params.items() if id(p) in raw}
            params, state = adam_step(params, grads, state)
        with no_grad():
            pv = baseline_mlp(params, x_valid, e_valid).data
        vmse = float(np.mean((pv - y_valid) ** 2))
        history.append(vmse)
        if vmse < best["valid_mse"]:
            best = {"valid_mse": vmse, "params": dict(params)}
    return best["params"], vocab, (env_mean, env_std), history


def predict_baseline(params, vocab, stats, systems) -> np.ndarray:
    from .readout import baseline_mlp

    env_mean, env_std = stats
    x = proportion_vectors(systems, vocab)
    e = (np.stack([s.env_vector() for s in systems]) - env_mean) / env_std
    with no_grad():
        return np.array(baseline_mlp(params, x, e).data)


# ---------------------------------------------------------------------------
# checkpoint I/O: one .npz with a JSON config entry plus parameter arrays
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: MixtureModel, config: TrainConfig, artifacts):
    meta = {
        "format_version": FORMAT_VERSION,
        "train_config": asdict(config),
        "type_dim": int(artifacts["type_dim"]),
        "best_epoch": int(artifacts.get("best_epoch", 0)),
    }
    arrays = {f"param:{k}": np.asarray(v.data) for k, v in model.params.items()}
    arrays["env_mean"] = artifacts["env_mean"]
    arrays["env_std"] = artifacts["env_std"]
    arrays["meta_json"] = np.frombuffer(
        json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Returns (model, train_config, artifacts)."""
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta_json"].tobytes()).decode("utf-8"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ContractError(
                f"unsupported checkpoint version {meta.get('format_version')}")
        known = {f.name for f in fields(TrainConfig)}
        config = TrainConfig(**{k: v for k, v in meta["train_config"].items()
                                if k in known})
        params = {}
        for key in z.files:
            if key.startswith("param:"):
                params[key[len("param:"):]] = Tensor(z[key], requires_grad=True)
        artifacts = {"env_mean": z["env_mean"], "env_std": z["env_std"],
                     "type_dim": meta["type_dim"],
                     "best_epoch": meta.get("best_epoch", 0)}
    model = MixtureModel(config.model_config(2 + artifacts["type_dim"]), params)
    return model, config, artifacts
