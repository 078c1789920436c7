import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sysrisk.autodiff import Var
from sysrisk.errors import DimensionMismatch, NonFiniteValue
from sysrisk.network import (GradientSet, Network, backward, forward, init, param_count, sgd_step,
                             zeros_like)

from gradcheck import LOSSES, fd_check, random_nets


def _linear(w, b, head="identity"):
    w = np.atleast_2d(np.asarray(w, float))
    return Network((w.shape[1], w.shape[0]), (w,), (np.asarray(b, float),), "relu", head)


def test_zero_params_softplus_head():
    net = zeros_like(init((3, 4, 2), seed=0), head="softplus")
    assert np.allclose(forward(net, np.random.default_rng(0).normal(size=(5, 3))), np.log(2.0))


def test_zero_params_normalized_head_is_one():
    net = zeros_like(init((3, 4, 1), seed=0), head="softplus_mean_normalized")
    assert np.allclose(forward(net, np.ones((6, 3))), 1.0, rtol=0, atol=1e-15)


def test_linear_layer_by_hand():
    net = _linear([[1.0, 2.0], [3.0, 4.0]], [0.5, -1.0])
    x = np.array([[1.0, -1.0], [2.0, 0.5]])
    assert np.allclose(forward(net, x), [[-0.5, -2.0], [3.5, 7.0]])


def test_forward_dimension_checks():
    net = init((3, 2), seed=0)
    with pytest.raises(DimensionMismatch):
        forward(net, np.ones((2, 4)))
    with pytest.raises(NonFiniteValue):
        forward(net, np.array([[1.0, np.nan, 0.0]]))


def test_normalized_head_unit_mean():
    net = init((4, 8, 8, 1), head="softplus_mean_normalized", seed=3)
    out = forward(net, np.random.default_rng(1).normal(size=(123, 4)) * 3)
    assert abs(out.mean() - 1.0) < 1e-12 and out.min() > 0


def test_shifted_head_respects_reference():
    net = init((3, 5, 3), head="shifted_softplus", seed=2)
    x = np.random.default_rng(2).normal(size=(50, 3))
    assert np.all(forward(net, x, reference=x) >= x)
    with pytest.raises(ValueError):
        forward(net, x)


def test_forward_pure():
    net = init((3, 6, 2), seed=5)
    x = np.random.default_rng(5).normal(size=(9, 3))
    assert np.array_equal(forward(net, x), forward(net, x))


def test_backward_linear_mean():
    net = _linear([[0.3, -0.2, 0.5]], [0.1])
    x = np.array([[1.5, -2.0, 4.0]])
    _, g = backward(net, lambda y, xv: y.mean(), x)
    assert np.allclose(g.weights[0], x)
    assert np.allclose(g.biases[0], [1.0])


def test_backward_softplus_at_zero():
    net = zeros_like(init((2, 3, 4), seed=0))
    _, g = backward(net, lambda y, xv: y.softplus().sum(axis=1).mean(), np.ones((5, 2)))
    assert np.allclose(g.biases[-1], 0.5)


def test_sgd_step_arithmetic():
    net = _linear([[1.0]], [0.0])
    g = GradientSet((np.array([[2.0]]),), (np.array([0.0]),))
    assert sgd_step(net, g, 0.1, "descent").weights[0][0, 0] == pytest.approx(0.8)
    assert sgd_step(net, g, 0.1, "ascent").weights[0][0, 0] == pytest.approx(1.2)
    same = sgd_step(net, g, 0.0)
    assert all(np.array_equal(a, b) for a, b in zip(same.params(), net.params()))
    with pytest.raises(DimensionMismatch):
        sgd_step(net, GradientSet((np.ones((2, 2)),), (np.zeros(1),)), 0.1)
    with pytest.raises(ValueError):
        sgd_step(net, g, 0.1, "sideways")


def test_momentum_accumulates():
    net = _linear([[1.0]], [0.0])
    g = GradientSet((np.array([[1.0]]),), (np.array([0.0]),))
    vel: list = []
    net = sgd_step(net, g, 0.1, "descent", vel, 0.5)
    net = sgd_step(net, g, 0.1, "descent", vel, 0.5)
    assert net.weights[0][0, 0] == pytest.approx(1.0 - 0.1 - 0.15)


def test_init_contract():
    a, b = init((5, 7, 3), seed=11), init((5, 7, 3), seed=11)
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))
    assert all(np.all(bias == 0) for bias in a.biases)
    for w in a.weights:
        assert np.max(np.abs(w)) <= np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
    assert param_count(a) == 5 * 7 + 7 + 7 * 3 + 3


def test_json_roundtrip_lossless():
    net = init((4, 6, 2), "tanh", "softplus", seed=4, standardize=np.random.default_rng(0).normal(size=(20, 4)))
    back = Network.from_json(net.to_json())
    assert all(np.array_equal(p, q) for p, q in zip(net.params(), back.params()))
    assert np.array_equal(net.input_shift, back.input_shift)
    assert (back.hidden_activation, back.output_head) == ("tanh", "softplus")
    assert back.to_json() == net.to_json()
    assert json.loads(net.to_json())["layer_sizes"] == [4, 6, 2]


# -- finite-difference gradient check --------------------------------------

@pytest.mark.parametrize("name", sorted(LOSSES))
def test_gradients_match_finite_differences(name):
    for trial, net, x in random_nets(name):
        assert fd_check(net, LOSSES[name], x) <= 1e-5, (name, trial)


@pytest.mark.parametrize("head", ["softplus", "softplus_mean_normalized", "shifted_softplus"])
def test_head_gradients(head):
    rng = np.random.default_rng(1)
    for trial in range(20):
        net = init((3, 5, 3 if head == "shifted_softplus" else 1), "tanh", head, seed=trial)
        x = rng.normal(size=(6, 3))
        ref = x if head == "shifted_softplus" else None
        loss = lambda y, xv: (y * (xv @ np.ones((3, 1)))).mean() + y.var(axis=0).sum()
        assert fd_check(net, loss, x, ref) <= 1e-5, (head, trial)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 200), st.integers(0, 1000))
def test_normalized_head_property(m, seed):
    net = init((2, 4, 1), head="softplus_mean_normalized", seed=seed)
    x = np.random.default_rng(seed).normal(size=(m, 2)) * 5
    out = forward(net, x)
    assert abs(out.mean() - 1.0) < 1e-12 and out.min() > 0


def test_var_ops_basic():
    a = Var(np.array([[1.0, -2.0]]))
    b = (a * a).sum()
    b.backward()
    assert np.allclose(a.grad, [[2.0, -4.0]])
