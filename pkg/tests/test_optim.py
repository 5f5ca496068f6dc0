"""Adam update contracts."""

import numpy as np
import pytest

from mixprop.autodiff import Tensor
from mixprop.errors import ContractError
from mixprop.optim import adam_step, init_state


def test_zero_grad_zero_decay_is_identity():
    params = {"w": Tensor(np.array([1.5, -2.0, 0.25]), requires_grad=True)}
    state = init_state(params, lr=1e-3, weight_decay=0.0)
    out, state = adam_step(params, {"w": np.zeros(3)}, state)
    assert np.array_equal(out["w"].data, params["w"].data)
    assert state.step == 1


def test_first_step_closed_form():
    # m_hat = g, v_hat = g^2 at t=1, so the update is lr * g/(|g|+eps)
    params = {"w": Tensor(0.0, requires_grad=True)}
    state = init_state(params, lr=5e-5, weight_decay=0.0)
    out, _ = adam_step(params, {"w": np.asarray(1.0)}, state)
    expected = -5e-5 * (1.0 / (1.0 + 1e-8))
    assert out["w"].item() == pytest.approx(expected, rel=1e-12)
    assert out["w"].item() == pytest.approx(-5e-5, rel=1e-6)


def test_paper_defaults():
    state = init_state({}, )
    assert state.lr == 5e-5
    assert state.weight_decay == 1e-12


def test_decoupled_weight_decay():
    params = {"w": Tensor(2.0, requires_grad=True)}
    state = init_state(params, lr=0.1, weight_decay=0.5)
    out, _ = adam_step(params, {"w": np.asarray(0.0)}, state)
    # zero gradient leaves the moments at zero; only decay acts
    assert out["w"].item() == pytest.approx(2.0 - 0.1 * 0.5 * 2.0, rel=1e-12)


def test_shape_mismatch_is_contract_error():
    params = {"w": Tensor(np.zeros(3), requires_grad=True)}
    state = init_state(params)
    with pytest.raises(ContractError):
        adam_step(params, {"w": np.zeros(4)}, state)


def test_moments_track_two_steps():
    params = {"w": Tensor(0.0, requires_grad=True)}
    state = init_state(params, lr=1e-2, weight_decay=0.0)
    p1, state = adam_step(params, {"w": np.asarray(1.0)}, state)
    p2, state = adam_step(p1, {"w": np.asarray(1.0)}, state)
    m = 0.9 * 0.1 + 0.1 * 1.0
    v = 0.999 * 0.001 + 0.001 * 1.0
    mh = m / (1 - 0.9 ** 2)
    vh = v / (1 - 0.999 ** 2)
    want = p1["w"].item() - 1e-2 * mh / (np.sqrt(vh) + 1e-8)
    assert p2["w"].item() == pytest.approx(want, rel=1e-12)
    assert state.step == 2
