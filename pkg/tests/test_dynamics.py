"""Training dynamics: integrator order, charge conservation, descent
orthogonality, noise covariance, stochastic flow and its drift law."""

import json
import math

import numpy as np
import pytest

from equichk import dynamics as dyn
from equichk.errors import (
    InsufficientEnsemble,
    InvalidNoiseModel,
    InvalidParams,
    SizeMismatch,
)
from equichk.models import Block, Dataset, Model, ModelSpec, build_model, loss_family, make_loss
from equichk.transforms import build_transform


def _identity_model():
    blocks = (Block("theta", (2,), 0, 2),)
    return Model(name="identity", d=2, c=2, blocks=blocks, func=lambda th: th,
                 init_params=np.array([1.0, 0.0]), input_point=np.zeros(2))


# ---------------------------------------------------------------------------
# gradient flow
# ---------------------------------------------------------------------------

def test_quadratic_flow_closed_form():
    # L = 0.5 |theta|^2 flows to theta(t) = e^-t theta(0)
    model = _identity_model()
    loss = make_loss("square", target=np.zeros(2))
    trj = dyn.gradient_flow(model, loss, np.array([1.0, 0.0]), T=1.0, dt=0.025)
    np.testing.assert_allclose(trj.states[-1], [math.exp(-1.0), 0.0], atol=2e-9)
    assert trj.times[0] == 0.0 and trj.times[-1] == pytest.approx(1.0)
    # losses monotonically non-increasing up to the acceptance slack
    assert np.all(np.diff(trj.losses) <= 1e-12)


def test_flow_error_scales_like_fourth_order():
    model = _identity_model()
    loss = make_loss("square", target=np.zeros(2))
    target = np.array([math.exp(-1.0), 0.0])
    errs = []
    for dt in (0.1, 0.05):
        trj = dyn.gradient_flow(model, loss, np.array([1.0, 0.0]), T=1.0, dt=dt)
        errs.append(np.linalg.norm(trj.states[-1] - target))
    assert 12.0 <= errs[0] / errs[1] <= 20.0  # ~2^4 for a 4th-order step


def test_flow_conserves_rescaling_charge(relu_mlp):
    t = build_transform("layer_rescaling", {"blocks": ["W1", "W2"]}, relu_mlp)
    loss = make_loss("exponential", label=1)
    trj = dyn.gradient_flow(relu_mlp, loss, relu_mlp.init_params, T=10.0, dt=0.01,
                            chargelist=[t])
    (cs,) = trj.charges.values()
    assert np.max(np.abs(cs - cs[0])) <= 1e-8 * (1.0 + abs(cs[0]))


def test_flow_conserves_reparam_charge():
    dl = build_model(ModelSpec("deep_linear", {"widths": [2, 3, 2]}, seed=5))
    A = np.array([[0.3, 0.1, 0.0], [0.1, -0.2, 0.4], [0.0, 0.4, 0.1]])
    t = build_transform("linear_reparam", {"A": A, "blocks": ["W1", "W2"]}, dl)
    loss = make_loss("square", target=np.array([0.3, -0.4]))
    trj = dyn.gradient_flow(dl, loss, dl.init_params, T=10.0, dt=0.01, chargelist=[t])
    (cs,) = trj.charges.values()
    assert np.max(np.abs(cs - cs[0])) <= 1e-8 * (1.0 + abs(cs[0]))


def test_flow_accepts_dataset_objective(uv_model, square_family, two_sample_dataset):
    trj = dyn.gradient_flow(uv_model, (square_family, two_sample_dataset),
                            np.array([1.0, 0.9]), T=0.5, dt=0.01)
    assert trj.losses[-1] < trj.losses[0]


def test_trajectory_validation():
    good = dict(states=np.zeros((3, 2)), losses=np.zeros(3),
                charges={}, diagnostics={})
    with pytest.raises(InvalidParams):
        dyn.Trajectory(times=np.array([0.0, 0.0, 1.0]), **good)
    with pytest.raises(SizeMismatch):
        dyn.Trajectory(times=np.array([0.0, 1.0]), **good)


# ---------------------------------------------------------------------------
# gradient descent
# ---------------------------------------------------------------------------

def test_descent_moves_orthogonally_to_symmetry(relu_mlp):
    t = build_transform("layer_rescaling", {"blocks": ["W1", "W2"]}, relu_mlp)
    loss = make_loss("exponential", label=1)
    trj = dyn.gradient_descent(relu_mlp, loss, relu_mlp.init_params, eta=0.05,
                               steps=200, chargelist=[t], symmetries=[t])
    assert np.max(trj.diagnostics["sym_ortho_max"]) <= 1e-10


def test_descent_zero_eta_is_constant(relu_mlp):
    loss = make_loss("exponential", label=1)
    trj = dyn.gradient_descent(relu_mlp, loss, relu_mlp.init_params, eta=0.0, steps=5)
    assert np.max(np.abs(trj.states - trj.states[0])) == 0.0


def test_descent_at_stability_edge_completes():
    # quadratic with lambda_max = 1: eta = 2/lambda oscillates but never blows up
    model = _identity_model()
    loss = make_loss("square", target=np.zeros(2))
    trj = dyn.gradient_descent(model, loss, np.array([1.0, 0.5]), eta=2.0, steps=50)
    assert np.all(np.isfinite(trj.states))
    np.testing.assert_allclose(np.abs(trj.states[:, 0]), 1.0, atol=1e-12)


def test_descent_rejects_nonsymmetry(probe_model, probe_loss):
    t = build_transform("homogeneity_scaling", {"degree": 1}, probe_model)
    with pytest.raises(InvalidParams):
        dyn.gradient_descent(probe_model, probe_loss, np.array([3.0, -1.0]),
                             eta=0.01, steps=2, symmetries=[t])


# ---------------------------------------------------------------------------
# norm growth (separable one-homogeneous head)
# ---------------------------------------------------------------------------

def test_norm_growth_after_first_correct_classification():
    probe = build_model(ModelSpec("linear_probe", {"x": [1.0, 2.0]}, seed=0))
    loss = make_loss("exponential", label=1)
    trj = dyn.gradient_flow(probe, loss, np.array([-0.15, -0.1]), T=6.0, dt=0.01)
    rep = dyn.norm_growth_check(probe, loss, trj)
    assert rep.status == "ok"
    assert rep.passed and rep.monotone
    assert rep.t0 is not None and 0.0 < rep.t0 < 6.0
    assert rep.euler_max_rel_gap <= 1e-7


def test_norm_growth_short_run_never_classifies():
    probe = build_model(ModelSpec("linear_probe", {"x": [1.0, 2.0]}, seed=0))
    loss = make_loss("exponential", label=1)
    trj = dyn.gradient_flow(probe, loss, np.array([-0.15, -0.1]), T=0.05, dt=0.01)
    rep = dyn.norm_growth_check(probe, loss, trj)
    assert rep.status == "never_correctly_classified"
    assert rep.passed  # Euler relation still holds everywhere


def test_norm_growth_requires_scalar_output():
    model = _identity_model()
    loss = make_loss("square", target=np.zeros(2))
    trj = dyn.gradient_flow(model, loss, np.array([1.0, 0.0]), T=0.1, dt=0.05)
    with pytest.raises(InvalidParams):
        dyn.norm_growth_check(model, loss, trj)


# ---------------------------------------------------------------------------
# noise covariance
# ---------------------------------------------------------------------------

def test_covariance_two_sample_oracle(uv_model, square_family, two_sample_dataset):
    # per-sample gradients g and -g: Sigma = (1/4)(g1-g2)(g1-g2)^T by hand
    theta = np.array([1.2, 0.6])
    cov = dyn.noise_covariance(uv_model, square_family, two_sample_dataset, theta)
    g1 = np.array([0.22 * 0.6, 0.22 * 1.2])
    oracle = 0.25 * np.outer(2 * g1, 2 * g1)
    np.testing.assert_allclose(cov.Sigma, oracle, atol=1e-15)
    assert cov.Sigma[0, 0] - cov.Sigma[1, 1] == pytest.approx(-0.052272, abs=1e-12)


def test_covariance_trace_gradient_matches_fd(uv_model, square_family, two_sample_dataset):
    theta = np.array([1.2, 0.6])
    cov = dyn.noise_covariance(uv_model, square_family, two_sample_dataset, theta)
    eps = 1e-6
    fd = np.zeros(2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = eps
        up = dyn.noise_covariance(uv_model, square_family, two_sample_dataset, theta + e)
        dn = dyn.noise_covariance(uv_model, square_family, two_sample_dataset, theta - e)
        fd[i] = (up.trace - dn.trace) / (2 * eps)
    np.testing.assert_allclose(cov.grad_trace, fd, atol=1e-8)


def test_covariance_single_sample_vanishes(uv_model, square_family):
    single = Dataset.equal_weight(((np.array([1.0]), np.array([0.5])),))
    cov = dyn.noise_covariance(uv_model, square_family, single, np.array([1.2, 0.6]))
    assert np.max(np.abs(cov.Sigma)) == 0.0


# ---------------------------------------------------------------------------
# stochastic flow
# ---------------------------------------------------------------------------

def test_noise_model_validation():
    with pytest.raises(InvalidNoiseModel):
        dyn.NoiseModel(mode="langevin", sigma=0.1)
    with pytest.raises(InvalidNoiseModel):
        dyn.NoiseModel(mode="exact_sde", sigma=-0.5)


def test_sgf_bit_reproducible(uv_model, square_family, two_sample_dataset):
    noise = dyn.NoiseModel(mode="exact_sde", sigma=0.1, seed=7)
    kw = dict(T=0.05, dt=1e-3, ensemble=1)
    e1 = dyn.sgf(uv_model, square_family, two_sample_dataset, np.array([1.2, 0.6]), noise, **kw)
    e2 = dyn.sgf(uv_model, square_family, two_sample_dataset, np.array([1.2, 0.6]), noise, **kw)
    np.testing.assert_array_equal(e1[0].states, e2[0].states)


def test_sgf_lockstep_streams(uv_model, square_family, two_sample_dataset):
    # member k's noise stream depends only on (seed, k), not ensemble size
    noise = dyn.NoiseModel(mode="exact_sde", sigma=0.1, seed=7)
    theta0 = np.array([1.2, 0.6])
    e1 = dyn.sgf(uv_model, square_family, two_sample_dataset, theta0, noise,
                 T=0.05, dt=1e-3, ensemble=1)
    e3 = dyn.sgf(uv_model, square_family, two_sample_dataset, theta0, noise,
                 T=0.05, dt=1e-3, ensemble=3)
    np.testing.assert_array_equal(e1[0].states, e3[0].states)


def test_sgf_zero_noise_tracks_deterministic_flow(uv_model, square_family, two_sample_dataset):
    noise = dyn.NoiseModel(mode="exact_sde", sigma=0.0, seed=1)
    theta0 = np.array([1.0, 0.9])
    ens = dyn.sgf(uv_model, square_family, two_sample_dataset, theta0, noise,
                  T=0.5, dt=1e-4, ensemble=2)
    np.testing.assert_array_equal(ens[0].states, ens[1].states)
    ref = dyn.gradient_flow(uv_model, (square_family, two_sample_dataset), theta0,
                            T=0.5, dt=1e-3)
    # Euler vs RK4 integrator-order gap only
    assert np.linalg.norm(ens[0].states[-1] - ref.states[-1]) <= 1e-4


def test_drift_check_exact_sde(uv_model, square_family, two_sample_dataset):
    noise = dyn.NoiseModel(mode="exact_sde", sigma=0.1, seed=7)
    t = build_transform("layer_rescaling", {"blocks": ["W1", "W2"]}, uv_model)
    ens = dyn.sgf(uv_model, square_family, two_sample_dataset, np.array([1.2, 0.6]),
                  noise, T=0.2, dt=1e-3, ensemble=400, chargelist=[t])
    rep = dyn.noether_drift_check(ens, t, uv_model, square_family, two_sample_dataset, noise)
    assert rep.passed
    assert abs(rep.empirical - rep.theory_trace) <= 3 * rep.std_error + rep.bias_budget
    # the charge leaks, and at this sigma the theory says it leaks downward
    assert rep.theory_trace < 0


def test_drift_check_minibatch(uv_model, square_family, two_sample_dataset):
    noise = dyn.NoiseModel(mode="minibatch", sigma=0.0, seed=11)
    t = build_transform("layer_rescaling", {"blocks": ["W1", "W2"]}, uv_model)
    ens = dyn.sgf(uv_model, square_family, two_sample_dataset, np.array([1.2, 0.6]),
                  noise, T=0.2, dt=1e-3, ensemble=300, chargelist=[t])
    rep = dyn.noether_drift_check(ens, t, uv_model, square_family, two_sample_dataset, noise)
    assert rep.passed
    assert rep.context["mode"] == "minibatch"


def test_drift_check_needs_ensemble(uv_model, square_family, two_sample_dataset):
    noise = dyn.NoiseModel(mode="exact_sde", sigma=0.1, seed=7)
    t = build_transform("layer_rescaling", {"blocks": ["W1", "W2"]}, uv_model)
    ens = dyn.sgf(uv_model, square_family, two_sample_dataset, np.array([1.2, 0.6]),
                  noise, T=0.01, dt=1e-3, ensemble=5, chargelist=[t])
    with pytest.raises(InsufficientEnsemble):
        dyn.noether_drift_check(ens, t, uv_model, square_family, two_sample_dataset, noise)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_trajectory_csv_layout(tmp_path, relu_mlp):
    t = build_transform("layer_rescaling", {"blocks": ["W1", "W2"]}, relu_mlp)
    loss = make_loss("exponential", label=1)
    trj = dyn.gradient_flow(relu_mlp, loss, relu_mlp.init_params, T=0.5, dt=0.01,
                            chargelist=[t])
    path = tmp_path / "flow.csv"
    dyn.write_trajectory_csv(trj, path)
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    assert header[0] == "time" and header[1] == "loss"
    assert any(h.startswith("charge_") for h in header)
    assert len(lines) - 1 == trj.n_records
    # values round-trip at full precision
    row = lines[1].split(",")
    assert float(row[0]) == trj.times[0] and float(row[1]) == trj.losses[0]


def test_ensemble_manifest(tmp_path, uv_model, square_family, two_sample_dataset):
    noise = dyn.NoiseModel(mode="exact_sde", sigma=0.1, seed=7)
    ens = dyn.sgf(uv_model, square_family, two_sample_dataset, np.array([1.2, 0.6]),
                  noise, T=0.02, dt=1e-3, ensemble=3)
    man = dyn.write_ensemble(ens, tmp_path / "ens")
    assert man["count"] == 3
    files = [e["file"] for e in man["trajectories"]]
    assert files == ["trajectory_0000.csv", "trajectory_0001.csv", "trajectory_0002.csv"]
    for f in files:
        assert (tmp_path / "ens" / f).exists()
    on_disk = json.loads((tmp_path / "ens" / "ensemble.json").read_text())
    assert on_disk == man
