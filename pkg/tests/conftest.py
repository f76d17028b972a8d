"""Shared fixtures: small catalog models, losses, and helpers."""

import numpy as np
import pytest

from equichk.models import Dataset, ModelSpec, build_model, loss_family, make_loss


@pytest.fixture
def probe_model():
    """f(theta) = <theta, (1, 2)>, the hand-checkable degree-1 model."""
    return build_model(ModelSpec("linear_probe", {"x": [1.0, 2.0]}, seed=0))


@pytest.fixture
def probe_loss():
    return make_loss("square", target=2.0)


@pytest.fixture
def relu_mlp():
    return build_model(ModelSpec("homogeneous_relu_mlp", {"widths": [2, 3, 1]}, seed=3))


@pytest.fixture
def deep_linear_121():
    return build_model(ModelSpec("deep_linear", {"widths": [1, 2, 1]}, seed=6))


@pytest.fixture
def uv_model():
    """deep_linear [1,1,1]: f(x) = v u x with theta = (u, v)."""
    return build_model(ModelSpec("deep_linear", {"widths": [1, 1, 1]}, seed=0))


@pytest.fixture
def two_sample_dataset():
    """The two-point regression set whose gradient covariance is known in
    closed form at theta = (1.2, 0.6)."""
    return Dataset.equal_weight((
        (np.array([1.0]), np.array([0.5])),
        (np.array([2.0]), np.array([1.55])),
    ))


@pytest.fixture
def square_family():
    return loss_family("square")
