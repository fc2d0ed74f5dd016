import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ctrlextract.envsim import pendulum_env
from ctrlextract.policy import (
    Architecture,
    PolicyParams,
    SmoothnessConstants,
    activation_pattern,
    estimate_constants,
    evaluate,
    evaluate_batch,
    flatten,
    load_policy,
    param_jacobian,
    save_policy,
    unflatten,
)

PENDULUM_NET = Architecture(((3, 1), (1, 2), (2, 1)), "tanh", 2.0)

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def _oracle_forward(arch, theta, s):
    """Straight-line layer-by-layer evaluation, separate from the package."""
    off, z = 0, np.asarray(s, float)
    n_layers = len(arch.layer_dims)
    for k, (i, o) in enumerate(arch.layer_dims):
        W = np.array(theta[off:off + o * i]).reshape(o, i)
        off += o * i
        b = np.array(theta[off:off + o])
        off += o
        out = []
        for r in range(o):
            acc = b[r]
            for c in range(i):
                acc += W[r, c] * z[c]
            out.append(acc)
        z = np.array(out)
        if k < n_layers - 1:
            z = np.maximum(z, 0)
    return arch.output_scale * np.tanh(z) if arch.output_activation == "tanh" else z


def test_zero_network_outputs_zero():
    for act in ("identity", "tanh"):
        arch = Architecture(((3, 4), (4, 2)), act)
        out = evaluate(PolicyParams(arch, np.zeros(arch.n_params)), np.array([1.0, -2.0, 3.0]))
        np.testing.assert_array_equal(out, [0.0, 0.0])


def test_single_identity_layer():
    pol = PolicyParams(Architecture(((1, 1),)), np.array([2.0, 1.0]))
    np.testing.assert_array_equal(evaluate(pol, np.array([3.0])), [7.0])


def test_pendulum_net_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        th, s = rng.normal(size=11), rng.normal(size=3)
        np.testing.assert_allclose(evaluate(PolicyParams(PENDULUM_NET, th), s), _oracle_forward(PENDULUM_NET, th, s),
                                   rtol=1e-13, atol=1e-14)


def test_dimension_mismatch_rejected():
    pol = PolicyParams(Architecture(((3, 1),)), np.zeros(4))
    with pytest.raises(ValueError):
        evaluate(pol, np.zeros(2))
    with pytest.raises(ValueError):
        PolicyParams(Architecture(((3, 1),)), np.zeros(5))


def test_non_composable_layers_rejected():
    with pytest.raises(ValueError):
        Architecture(((3, 2), (3, 1)))


def test_flatten_small():
    np.testing.assert_array_equal(flatten([(np.array([[3.0]]), np.array([4.0]))]), [3.0, 4.0])


def test_pendulum_network_size():
    assert PENDULUM_NET.n_params == 11


@given(arrays(float, 11, elements=finite))
def test_flatten_unflatten_bijection(theta):
    np.testing.assert_array_equal(flatten(unflatten(theta, PENDULUM_NET)), theta)


def test_unflatten_length_checked():
    with pytest.raises(ValueError):
        unflatten(np.zeros(10), PENDULUM_NET)


def test_flatten_order_is_layer_major_rows_then_bias():
    arch = Architecture(((2, 2),))
    (w, b), = unflatten(np.arange(6.0), arch)
    np.testing.assert_array_equal(w, [[0, 1], [2, 3]])
    np.testing.assert_array_equal(b, [4, 5])


def test_linear_policy_constants():
    arch = Architecture(((1, 1),), bias=False)
    c = estimate_constants(arch, ([-2.0], [2.0]), ([0.0], [1.0]), 500, 0)
    assert c.G == pytest.approx(1.5, rel=2e-3)
    assert c.L == pytest.approx(0.0, abs=1e-6)


def test_relu_unit_constant_matches_dense_grid():
    # pi = w2 * relu(w1 s + b1) + b2 on a small box; the Jacobian norm is
    # largest where the unit is active
    arch = Architecture(((1, 1), (1, 1)))
    lo, hi = np.array([0.5, 0.0, 0.5, 0.0]), np.array([1.0, 0.5, 1.0, 0.5])
    c = estimate_constants(arch, (lo, hi), ([0.0], [1.0]), 4000, 1, safety_factor=1.0)
    ax = [np.linspace(a, b, 11) for a, b in zip(lo, hi)] + [np.linspace(0, 1, 101)]
    grid = np.stack(np.meshgrid(*ax, indexing="ij"), -1).reshape(-1, 5)
    w1, b1, w2, s = grid[:, 0], grid[:, 1], grid[:, 2], grid[:, 4]
    act = (w1 * s + b1) > 0
    jac = np.stack([w2 * s * act, w2 * act, np.maximum(w1 * s + b1, 0), np.ones_like(s)], 1)
    oracle = np.max(np.linalg.norm(jac, axis=1))
    assert c.G == pytest.approx(oracle, rel=0.05)


@given(st.integers(0, 10_000))
def test_lipschitz_in_theta(seed):
    arch = Architecture(((3, 1),), "tanh", 2.0)
    lo, hi = -np.ones(4), np.ones(4)
    box = (np.array([-1, -1, -8.0]), np.array([1, 1, 8.0]))
    consts = estimate_constants(arch, (lo, hi), box, 2000, 0)
    rng = np.random.default_rng(seed)
    t1, t2 = rng.uniform(lo, hi, (2, 50, 4))
    s = rng.uniform(*box, size=(50, 3))
    a1 = evaluate_batch(arch, t1, s[:, None])[:, 0]
    a2 = evaluate_batch(arch, t2, s[:, None])[:, 0]
    assert np.all(np.linalg.norm(a1 - a2, axis=1) <= consts.G * np.linalg.norm(t1 - t2, axis=1))


def test_analytic_jacobian_matches_central_differences():
    rng = np.random.default_rng(5)
    checked = 0
    for _ in range(100):
        th, s = rng.normal(size=11), rng.normal(size=3)
        pol = PolicyParams(PENDULUM_NET, th)
        h = 1e-6
        pts = th + np.concatenate([np.eye(11), -np.eye(11)]) * h
        if np.any(activation_pattern(PENDULUM_NET, pts, s[None]) != activation_pattern(PENDULUM_NET, th, s[None])):
            continue  # stencil crosses a kink
        out = evaluate_batch(PENDULUM_NET, pts, s[None])[:, 0]
        fd = ((out[:11] - out[11:]) / (2 * h)).T
        jac = param_jacobian(pol, s)
        np.testing.assert_allclose(jac, fd, rtol=1e-5, atol=1e-8)
        checked += 1
    assert checked > 50


def test_estimate_constants_reward_bound():
    env = pendulum_env()
    arch = Architecture(((3, 1),), "tanh", 2.0)
    c = estimate_constants(arch, (-np.ones(4), np.ones(4)), env.state_sampler, 1000, 0, env=env, horizon=10,
                           discount=0.9)
    assert 0 < c.R <= env.reward_bound and c.H == 10 and c.gamma == 0.9


def test_degenerate_boxes_rejected():
    arch = Architecture(((1, 1),))
    with pytest.raises(ValueError):
        estimate_constants(arch, (np.zeros(2), np.zeros(2)), ([0.0], [1.0]), 10, 0)
    with pytest.raises(ValueError):
        estimate_constants(arch, (-np.ones(2), np.ones(2)), ([0.0], [0.0]), 10, 0)


def test_smoothness_constants_validation():
    with pytest.raises(ValueError):
        SmoothnessConstants(1, 1, 1, 1, 1.0)
    with pytest.raises(ValueError):
        SmoothnessConstants(-1, 1, 1, 1, 0.5)


def test_policy_file_round_trip(tmp_path):
    pol = PolicyParams(PENDULUM_NET, np.random.default_rng(2).normal(size=11))
    save_policy(tmp_path / "p.json", pol)
    back = load_policy(tmp_path / "p.json")
    assert back.arch == pol.arch
    np.testing.assert_array_equal(back.theta, pol.theta)
