"""Derivative engine certificates: hand oracles, calculus laws, FD agreement.

The chain/product-rule tests are the "engine certificate": second-order
propagation through composites must agree exactly with the assembled
calculus, not just to truncation error.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from equichk import diff_engine as de
from equichk.diff_engine import DiffConfig, fd_oracle, jacobian, second_derivative
from equichk.errors import IndexOutOfRange
from equichk.models import ModelSpec, build_model, make_loss
from equichk.tensor_core import compose

EXACT = DiffConfig(mode="exact")
FD = DiffConfig(mode="finite_difference")


# ---------------------------------------------------------------------------
# hand-derived oracles
# ---------------------------------------------------------------------------

def _scalar_map(theta):
    # f(a, b, c) = exp(a) * b + tanh(c); gradient and Hessian by hand below
    a = de.take_last(theta, slice(0, 1))
    b = de.take_last(theta, slice(1, 2))
    c = de.take_last(theta, slice(2, 3))
    return de.exp(a) * b + de.tanh(c)


def test_jacobian_hand_oracle():
    point = np.array([0.3, -1.2, 0.5])
    jac = jacobian(_scalar_map, point, EXACT)
    a, b, c = point
    expect = np.array([np.exp(a) * b, np.exp(a), 1.0 / np.cosh(c) ** 2])
    np.testing.assert_allclose(jac.array.reshape(-1), expect, rtol=1e-15, atol=0)


def test_second_derivative_hand_oracle():
    point = np.array([0.3, -1.2, 0.5])
    hess = second_derivative(_scalar_map, point, EXACT)
    a, b, c = point
    t = np.tanh(c)
    expect = np.zeros((3, 3))
    expect[0, 0] = np.exp(a) * b
    expect[0, 1] = expect[1, 0] = np.exp(a)
    expect[2, 2] = -2.0 * t * (1.0 - t * t)
    np.testing.assert_allclose(hess.array.reshape(3, 3), expect, rtol=1e-14, atol=1e-16)


def test_vector_map_jacobian_shape_and_values():
    w = np.array([[1.0, 2.0], [-0.5, 0.25], [3.0, -1.0]])
    jac = jacobian(lambda th: de.matvec(w, th), np.array([0.7, -0.3]), EXACT)
    # stored layout: (input axis, output axis) = w^T
    np.testing.assert_allclose(jac.array, w.T, atol=1e-15)


# ---------------------------------------------------------------------------
# calculus laws (engine certificate)
# ---------------------------------------------------------------------------

def _poly(theta):
    a = de.take_last(theta, slice(0, 1))
    b = de.take_last(theta, slice(1, 2))
    return a * a * b + b


def _smooth(theta):
    a = de.take_last(theta, slice(0, 1))
    b = de.take_last(theta, slice(1, 2))
    return de.exp(a * b) + de.log(a * a + b * b + de.expand_last(de.dot(theta, np.zeros(2))) + 2.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_product_rule_first_and_second_order(seed):
    rng = np.random.default_rng(seed)
    point = rng.uniform(-1.0, 1.0, size=2)

    prod = lambda th: _poly(th) * _smooth(th)
    jac = jacobian(prod, point, EXACT).array.reshape(-1)
    f = np.asarray(_poly(point)).reshape(())
    g = np.asarray(_smooth(point)).reshape(())
    jf = jacobian(_poly, point, EXACT).array.reshape(-1)
    jg = jacobian(_smooth, point, EXACT).array.reshape(-1)
    np.testing.assert_allclose(jac, jf * g + f * jg, rtol=1e-13, atol=1e-14)

    hess = second_derivative(prod, point, EXACT).array.reshape(2, 2)
    hf = second_derivative(_poly, point, EXACT).array.reshape(2, 2)
    hg = second_derivative(_smooth, point, EXACT).array.reshape(2, 2)
    assembled = hf * g + np.outer(jf, jg) + np.outer(jg, jf) + f * hg
    np.testing.assert_allclose(hess, assembled, rtol=1e-12, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_chain_rule_through_model_and_loss(seed):
    """jac(loss o f) must equal compose(loss', jac f) exactly."""
    rng = np.random.default_rng(seed)
    model = build_model(ModelSpec("deep_linear", {"widths": [2, 3, 2]}, seed=1))
    loss = make_loss("square", target=np.array([0.1, -0.2]))
    theta = rng.uniform(-1.0, 1.0, size=model.d)

    composite = lambda th: loss.apply(model.func(th))
    jac_full = jacobian(composite, theta, EXACT).array.reshape(-1)
    jac_f = jacobian(model.func, theta, EXACT)             # (d, c)
    y = np.asarray(model.func(theta), dtype=float)
    gl = loss.grad(y)                                      # (c,)
    assembled = jac_f.array @ gl
    np.testing.assert_allclose(jac_full, assembled, rtol=1e-13, atol=1e-15)


def test_second_derivative_symmetry():
    model = build_model(ModelSpec("homogeneous_relu_mlp", {"widths": [2, 3, 1]}, seed=9))
    theta = np.random.default_rng(4).uniform(-1.0, 1.0, size=model.d)
    hess = second_derivative(model.func, theta, EXACT).array
    np.testing.assert_allclose(hess, np.swapaxes(hess, 0, 1), atol=0)


# ---------------------------------------------------------------------------
# exact vs finite differences on every catalog map
# ---------------------------------------------------------------------------

CATALOG_SPECS = [
    ModelSpec("homogeneous_relu_mlp", {"widths": [2, 3, 1]}, seed=3),
    ModelSpec("homogeneous_relu_mlp", {"widths": [2, 4, 3, 1]}, seed=4),
    ModelSpec("deep_linear", {"widths": [2, 3, 2]}, seed=5),
    ModelSpec("factored_last_layer", {"c": 3, "s": 2, "hidden": [3]}, seed=6),
    ModelSpec("linear_probe", {"x": [1.0, 2.0]}, seed=7),
]


@pytest.mark.parametrize("spec", CATALOG_SPECS, ids=lambda s: s.name)
def test_exact_vs_fd_on_catalog_maps(spec):
    model = build_model(spec)
    rng = np.random.default_rng(hash(spec.name) % 2 ** 32)
    theta = model.init_params + 0.05 * rng.standard_normal(model.d)
    exact_jac = jacobian(model.func, theta, EXACT).array
    fd_jac = jacobian(model.func, theta, FD).array
    scale = max(1.0, float(np.abs(exact_jac).max()))
    assert np.abs(exact_jac - fd_jac).max() <= 1e-6 * scale

    exact_h = second_derivative(model.func, theta, EXACT).array
    fd_h = second_derivative(model.func, theta, FD).array
    scale_h = max(1.0, float(np.abs(exact_h).max()))
    assert np.abs(exact_h - fd_h).max() <= 1e-5 * scale_h


def test_fd_oracle_rejects_high_order():
    with pytest.raises(IndexOutOfRange):
        fd_oracle(lambda th: th, np.zeros(2), 3, FD)


# ---------------------------------------------------------------------------
# loss gradient/Hessian assembly
# ---------------------------------------------------------------------------

def test_grad_and_hessian_of_loss_probe_oracle(probe_model, probe_loss):
    theta = np.array([3.0, -1.0])
    value, grad, hess = de.grad_and_hessian_of_loss(probe_model, probe_loss, theta, EXACT)
    # y = 1, l = 0.5 (1-2)^2 = 0.5, grad = (y-t) x = -(1,2), hess = x x^T
    assert value == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_allclose(grad.array, [-1.0, -2.0], atol=1e-14)
    np.testing.assert_allclose(hess.array, np.outer([1, 2], [1, 2]), atol=1e-13)


def test_gradient_at_points_matches_jacobian(relu_mlp):
    loss = make_loss("square", target=0.25)
    mp = lambda th: loss.apply(relu_mlp.func(th))
    rng = np.random.default_rng(12)
    pts = rng.uniform(-1.0, 1.0, size=(5, relu_mlp.d))
    batch = de.gradient_at_points(mp, pts)
    for i in range(5):
        one = jacobian(mp, pts[i], EXACT).array.reshape(-1)
        np.testing.assert_allclose(batch[i], one, atol=1e-14)


def test_hessians_at_points_matches_second_derivative(uv_model):
    loss = make_loss("square", target=0.4)
    mp = lambda th: loss.apply(uv_model.func(th))
    pts = np.array([[1.2, 0.6], [0.4, -0.8]])
    batch = de.hessians_at_points(mp, pts)
    for i in range(2):
        one = second_derivative(mp, pts[i], EXACT).array.reshape(uv_model.d, uv_model.d)
        np.testing.assert_allclose(batch[i], one, atol=1e-13)


def test_relu_second_derivative_vanishes_off_kink():
    def f(theta):
        return de.relu(theta)

    h = second_derivative(f, np.array([0.5, -0.5]), EXACT).array
    np.testing.assert_array_equal(h, np.zeros_like(h))
