"""Parameter initialization and MLP application over name-keyed dicts.

Every learnable matrix lives in a flat ``dict[str, Tensor]`` whose key
prefixes partition the model (solvent_encoder / salt_encoder / gin /
attention / head); checkpoints and the optimizer operate on the same keys.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat, matmul, silu


def init_linear(rng, params: dict, name: str, fan_in: int, fan_out: int,
                scale: float | None = None, bias: np.ndarray | None = None):
    std = np.sqrt(2.0 / fan_in) if scale is None else scale
    params[f"{name}.w"] = Tensor(rng.normal(scale=std, size=(fan_in, fan_out)),
                                 requires_grad=True)
    b = np.zeros(fan_out) if bias is None else np.asarray(bias, dtype=np.float64)
    params[f"{name}.b"] = Tensor(b, requires_grad=True)


def init_mlp(rng, params: dict, name: str, dims: list[int],
             final_scale: float | None = None,
             final_bias: np.ndarray | None = None):
    """Chain of linear layers ``dims[0] -> ... -> dims[-1]``.

    ``final_scale``/``final_bias`` override the last layer's init, used to
    start learned transforms at (near) identity.
    """
    for k in range(len(dims) - 1):
        last = k == len(dims) - 2
        init_linear(rng, params, f"{name}.l{k}", dims[k], dims[k + 1],
                    scale=final_scale if last else None,
                    bias=final_bias if last else None)


def apply_linear(params: dict, name: str, x: Tensor) -> Tensor:
    return matmul(x, params[f"{name}.w"]) + params[f"{name}.b"]


def apply_mlp(params: dict, name: str, x: Tensor, n_layers: int,
              final_activation: bool = False) -> Tensor:
    """SiLU between layers; the output is linear unless requested otherwise."""
    for k in range(n_layers):
        x = apply_linear(params, f"{name}.l{k}", x)
        if k < n_layers - 1 or final_activation:
            x = silu(x)
    return x


def cat_features(parts) -> Tensor:
    return concat(list(parts), axis=1)


def group_names(params: dict) -> dict[str, list[str]]:
    """Partition parameter names by their top-level prefix."""
    groups: dict[str, list[str]] = {}
    for name in params:
        groups.setdefault(name.split(".", 1)[0], []).append(name)
    return groups
