import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ctrlextract.envsim import pendulum_env, synthetic_env
from ctrlextract.objective import (
    ObjectiveEvaluator,
    bernstein_bound,
    estimate_noise_bound,
    evaluate_jbar,
    evaluate_jbar_many,
    hoeffding_bound,
    rollout_returns,
)
from ctrlextract.policy import Architecture, PolicyParams

BOWL = {"family": "polynomial", "terms": [[-1, [2, 0]], [-1, [0, 2]]], "low": [-1, -1], "high": [1, 1]}
ARCH2 = Architecture(((1, 1),))
PEND_ARCH = Architecture(((3, 1),), "tanh", 2.0)


def _pendulum_ev(n, seed=0, horizon=15):
    return ObjectiveEvaluator(pendulum_env(noise_scale=0.3), PEND_ARCH, horizon, 0.95, n, seed)


def test_deterministic_bowl_at_origin_is_exactly_zero():
    ev = ObjectiveEvaluator(synthetic_env(BOWL), ARCH2, 0, 0.0, 1)
    assert evaluate_jbar(ev, np.zeros(2)) == 0.0
    assert evaluate_jbar(ev, PolicyParams(ARCH2, np.zeros(2))) == 0.0


@given(arrays(float, 2, elements=st.floats(-1, 1)), st.integers(1, 8))
def test_deterministic_env_jbar_equals_j(theta, n):
    ev = ObjectiveEvaluator(synthetic_env(BOWL), ARCH2, 0, 0.0, n)
    assert evaluate_jbar(ev, theta) == pytest.approx(-float(theta @ theta), abs=1e-12)


def test_synthetic_jbar_matches_descriptor():
    env = synthetic_env(BOWL)
    ev = ObjectiveEvaluator(env, ARCH2, 0, 0.0, 1)
    th = np.random.default_rng(0).uniform(-1, 1, (300, 2))
    np.testing.assert_allclose(evaluate_jbar_many(ev, th), env.descriptor.value(th), atol=1e-10, rtol=0)


def test_common_random_numbers_repeatable():
    ev = _pendulum_ev(8)
    th = np.random.default_rng(1).uniform(-1, 1, (5, 4))
    a = evaluate_jbar_many(ev, th)
    b = np.array([evaluate_jbar(ev, t) for t in th])
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, evaluate_jbar_many(ev, th))


def test_hoeffding_closed_form():
    assert hoeffding_bound(1.0, 100, 0.99) == pytest.approx(np.sqrt(np.log(200) / 200), rel=1e-12)
    # frozen oracle value; the closed form evaluates to 0.162762, not 0.1629
    assert hoeffding_bound(1.0, 100, 0.99) == pytest.approx(0.162762, abs=1e-6)


def test_noise_bound_uses_given_range():
    ev = _pendulum_ev(100)
    probes = np.random.default_rng(2).uniform(-1, 1, (10, 4))
    m, ev2 = estimate_noise_bound(ev, probes, 0.99, value_range=(0.0, 1.0))
    assert m == pytest.approx(0.162762, abs=1e-6) and ev2.noise_bound == m


def test_noise_bound_scales_with_inverse_root_n():
    probes = np.random.default_rng(3).uniform(-1, 1, (10, 4))
    m1, _ = estimate_noise_bound(_pendulum_ev(50), probes, 0.99, value_range=(-50, 0))
    m2, _ = estimate_noise_bound(_pendulum_ev(100), probes, 0.99, value_range=(-50, 0))
    assert m2 / m1 == pytest.approx(1 / np.sqrt(2), rel=1e-12)


def test_noise_bound_deterministic_env_is_zero():
    ev = ObjectiveEvaluator(synthetic_env(BOWL), ARCH2, 0, 0.0, 4)
    m, _ = estimate_noise_bound(ev, np.zeros((10, 2)))
    assert m == 0.0


def test_noise_bound_argument_checks():
    ev = _pendulum_ev(4)
    with pytest.raises(ValueError):
        estimate_noise_bound(ev, np.zeros((9, 4)))
    for conf in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            estimate_noise_bound(ev, np.zeros((10, 4)), conf)


def test_bernstein_shrinks_for_low_variance():
    assert bernstein_bound(1e-6, 1.0, 1000, 0.99) < hoeffding_bound(1.0, 1000, 0.99)


def test_stochastic_pendulum_bound_against_large_sample_oracle():
    rng = np.random.default_rng(4)
    theta = rng.uniform(-1, 1, 4)
    ev = _pendulum_ev(256, seed=10)
    m, _ = estimate_noise_bound(ev, rng.uniform(-1, 1, (10, 4)), 0.99)
    ref = float(rollout_returns(_pendulum_ev(100_000, seed=999), theta).mean())
    assert abs(evaluate_jbar(ev, theta) - ref) <= m


def test_noise_bound_soundness_rate():
    rng = np.random.default_rng(5)
    ev = _pendulum_ev(32, seed=20, horizon=10)
    m, _ = estimate_noise_bound(ev, rng.uniform(-1, 1, (10, 4)), 0.99)
    th = rng.uniform(-1, 1, (200, 4))
    ref = rollout_returns(_pendulum_ev(2000, seed=777, horizon=10), th).mean(axis=1)
    ok = np.abs(evaluate_jbar_many(ev, th) - ref) <= m
    assert ok.mean() >= 0.99


def test_evaluator_validation():
    env = synthetic_env(BOWL)
    for kw in ({"rollouts_per_eval": 0}, {"horizon": -1}, {"discount": 1.0}, {"noise_bound": -1.0}):
        args = dict(env=env, arch=ARCH2, horizon=0, discount=0.0) | kw
        with pytest.raises(ValueError):
            ObjectiveEvaluator(**args)
    ev = ObjectiveEvaluator(env, ARCH2, 0, 0.0)
    with pytest.raises(ValueError):
        evaluate_jbar(ev, np.zeros(3))
