"""Adam with decoupled weight decay, operating on name-keyed parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ContractError


@dataclass
class OptimizerState:
    """Per-parameter moment accumulators plus the shared step counter."""

    lr: float = 5e-5
    weight_decay: float = 1e-12
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_state(params: dict[str, Tensor], lr: float = 5e-5,
               weight_decay: float = 1e-12) -> OptimizerState:
    state = OptimizerState(lr=lr, weight_decay=weight_decay)
    for name, p in params.items():
        state.m[name] = np.zeros(p.shape)
        state.v[name] = np.zeros(p.shape)
    return state


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: OptimizerState) -> tuple[dict[str, Tensor], OptimizerState]:
    """One bias-corrected Adam update; returns fresh parameter tensors.

    Weight decay is decoupled (applied directly to the parameter, not mixed
    into the moments).  Parameters without a gradient entry are treated as
    having zero gradient.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    out: dict[str, Tensor] = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros(p.shape)
        else:
            g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ContractError(
                f"gradient shape {g.shape} does not match parameter "
                f"'{name}' shape {p.shape}")
        if state.m[name].shape != p.shape:
            raise ContractError(f"optimizer state shape mismatch for '{name}'")
        m = state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay != 0.0:
            update = update + state.weight_decay * p.data
        out[name] = Tensor(p.data - state.lr * update, requires_grad=True)
    return out, state
