import warnings

import numpy as np
import pytest

from ctrlextract.envsim import pendulum_env, synthetic_env
from ctrlextract.objective import ObjectiveEvaluator, evaluate_jbar, rollout_returns
from ctrlextract.policy import Architecture
from ctrlextract.trainer import TrainConfig, fd_gradient, train, write_train_log

ARCH1 = Architecture(((1, 1),), bias=False)
SHIFTED = {"family": "polynomial", "terms": [[-1, [2]], [0.6, [1]], [-0.09, [0]]], "low": [-1], "high": [1]}
DOUBLE_WELL = {"family": "polynomial", "terms": [[-1, [4]], [2, [2]], [-1, [0]]], "low": [-2], "high": [2]}


def _synthetic(spec):
    env = synthetic_env(spec)
    return env, ObjectiveEvaluator(env, ARCH1, 0, 0.0, 1)


def test_quadratic_maximum():
    env, ev = _synthetic(SHIFTED)
    res = train(env, ARCH1, ev, TrainConfig(steps=500, learning_rate=0.2, init=(0.0,), tolerance=1e-6))
    assert res.converged
    assert res.policy.theta[0] == pytest.approx(0.3, abs=1e-3)


def test_double_well_basin_matches_gradient_flow():
    env, ev = _synthetic(DOUBLE_WELL)
    res = train(env, ARCH1, ev, TrainConfig(steps=2000, learning_rate=0.05, init=(0.1,), theta_max=2.0,
                                            tolerance=1e-6))
    # gradient-flow oracle: small-step Euler on d theta/dt = 4 theta - 4 theta^3
    th = 0.1
    for _ in range(200_000):
        th += 1e-4 * (4 * th - 4 * th**3)
    assert th == pytest.approx(1.0, abs=1e-6)
    assert res.policy.theta[0] == pytest.approx(th, abs=1e-3)


def test_stationarity_and_projection_invariants():
    env, ev = _synthetic(DOUBLE_WELL)
    cfg = TrainConfig(steps=3000, learning_rate=0.05, init=(0.3,), theta_max=0.8, tolerance=1e-4)
    res = train(env, ARCH1, ev, cfg)
    # the maximum at 1 lies outside the box: the projected gradient vanishes at the face
    assert res.converged and res.policy.theta[0] == 0.8
    assert np.all(np.abs(res.policy.theta) <= cfg.theta_max)


def test_interior_stationarity_tolerance():
    env, ev = _synthetic(SHIFTED)
    cfg = TrainConfig(steps=1000, learning_rate=0.1, init=(-0.7,), tolerance=1e-5)
    res = train(env, ARCH1, ev, cfg)
    _, g = fd_gradient(ev, res.policy.theta, cfg.fd_step)
    assert np.max(np.abs(g)) <= cfg.tolerance


def test_deterministic_under_seed():
    env = pendulum_env(noise_scale=0.1)
    arch = Architecture(((3, 1),), "tanh", 2.0)
    ev = ObjectiveEvaluator(env, arch, 10, 0.9, 4)
    cfg = TrainConfig(steps=15, batch_rollouts=4, seed=3, max_step=0.1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        a, b = train(env, arch, ev, cfg), train(env, arch, ev, cfg)
    np.testing.assert_array_equal(a.policy.theta, b.policy.theta)


def test_nonconvergence_warns_and_returns_best():
    env, ev = _synthetic(SHIFTED)
    with pytest.warns(RuntimeWarning):
        res = train(env, ARCH1, ev, TrainConfig(steps=2, learning_rate=1e-3, init=(-0.9,)))
    assert not res.converged
    assert res.jbar == max(h[1] for h in res.history)


def test_pendulum_training_beats_zero_policy():
    env = pendulum_env(noise_scale=0.1)
    arch = Architecture(((3, 1),), "tanh", 2.0)
    ev = ObjectiveEvaluator(env, arch, 40, 0.95, 16)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = train(env, arch, ev, TrainConfig(steps=150, batch_rollouts=16, seed=1, max_step=0.1))
    oracle = ObjectiveEvaluator(env, arch, 40, 0.95, 10_000, base_seed=4242)
    trained = rollout_returns(oracle, res.policy.theta)[0]
    zero = rollout_returns(oracle, np.zeros(4))[0]
    se = np.sqrt(trained.var() / trained.size + zero.var() / zero.size)
    assert trained.mean() - zero.mean() > 3 * se


def test_train_log(tmp_path):
    env, ev = _synthetic(SHIFTED)
    res = train(env, ARCH1, ev, TrainConfig(steps=50, learning_rate=0.2, init=(0.0,)))
    write_train_log(tmp_path / "log.csv", res)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "step,jbar,grad_norm" and len(lines) == len(res.history) + 1


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(steps=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
    env, ev = _synthetic(SHIFTED)
    with pytest.raises(ValueError):
        train(env, ARCH1, ev, TrainConfig(init=(0.0, 1.0)))


def test_evaluator_value_matches_history():
    env, ev = _synthetic(SHIFTED)
    res = train(env, ARCH1, ev, TrainConfig(steps=200, learning_rate=0.2, init=(0.0,)))
    assert res.jbar == pytest.approx(evaluate_jbar(ev, res.policy.theta), abs=1e-12)
