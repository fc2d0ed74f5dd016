import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import QuadraticSurrogate
from ctrlextract.envsim import synthetic_env
from ctrlextract.objective import ObjectiveEvaluator
from ctrlextract.policy import Architecture, PolicyParams
from ctrlextract.surrogate import KernelSpec, Surrogate, build_grid, build_surrogate
from ctrlextract.enumerator import (
    CandidateSet,
    FeasibilityProblem,
    SolverConfig,
    enumerate_candidates,
    load_candidates,
    save_candidates,
    solve_once,
    validate_candidates,
    verify_coverage,
)

BUMPS = {"family": "gaussian_mixture", "centers": [[-0.5, -0.5], [0.6, -0.2], [0.0, 0.6]],
         "widths": [0.15, 0.15, 0.15], "weights": [1.0, 0.8, 0.6], "low": [-1, -1], "high": [1, 1]}


def _linear_surrogate(dim, weights, const=0.0, n_out=None):
    """g_hat(theta) = W theta + const, from the linear block only."""
    w = np.atleast_2d(np.asarray(weights, dtype=float))
    alphas = np.hstack([w, np.full((w.shape[0], 1), const)])
    return Surrogate([KernelSpec("linear")], 0, 0, dim, alphas, np.zeros(dim), np.ones(dim))


def _zero_surrogate(dim):
    return _linear_surrogate(dim, np.zeros((1, dim)))


# ------------------------------------------------------------- solve_once

def test_zero_surrogate_is_found_anywhere():
    prob = FeasibilityProblem(_zero_surrogate(2), [1.0], [0, 0], [1, 1], 0.1)
    res = solve_once(prob, SolverConfig())
    assert res.found
    assert np.all((res.theta >= 0) & (res.theta <= 1))
    assert np.all(np.abs(prob.surrogate.predict(res.theta[None])) <= 1.0)


def test_identity_surrogate_on_shifted_box_is_unsat():
    prob = FeasibilityProblem(_linear_surrogate(1, [[1.0]]), [0.1], [1.0], [2.0], 0.1)
    assert solve_once(prob, SolverConfig()).status == "unsat"


def test_quadratic_root_found(quad_surrogate):
    prob = FeasibilityProblem(quad_surrogate, [0.01], [-1.0], [1.0], 0.1)
    res = solve_once(prob, SolverConfig(delta=1e-4))
    # dense-grid oracle at 1e-4 resolution: the feasible set is two intervals around +-0.5
    grid = np.linspace(-1, 1, 20001)
    feas = grid[np.abs(grid**2 - 0.25) <= 0.01]
    assert np.min(np.abs(feas - res.theta[0])) <= 1e-4 + 1e-12
    assert min(abs(res.theta[0] - 0.5), abs(res.theta[0] + 0.5)) <= 0.011


def test_multistart_finds_quadratic_root(quad_surrogate):
    prob = FeasibilityProblem(quad_surrogate, [0.01], [-1.0], [1.0], 0.1)
    res = solve_once(prob, SolverConfig(backend="multistart", batch=4, seed=1))
    assert res.found and min(abs(res.theta[0] - 0.5), abs(res.theta[0] + 0.5)) <= 0.011


def test_multistart_cannot_certify_unsat():
    prob = FeasibilityProblem(_linear_surrogate(1, [[1.0]]), [0.1], [1.0], [2.0], 0.1)
    res = solve_once(prob, SolverConfig(backend="multistart", max_restarts=4, batch=8))
    assert res.status == "unknown"


def test_problem_rejects_inconsistent_dimensions(quad_surrogate):
    with pytest.raises(ValueError):
        FeasibilityProblem(quad_surrogate, [0.01], [-1.0, -1.0], [1.0, 1.0], 0.1)
    with pytest.raises(ValueError):
        FeasibilityProblem(quad_surrogate, [0.01, 0.01], [-1.0], [1.0], 0.1)
    with pytest.raises(ValueError):
        FeasibilityProblem(quad_surrogate, [0.01], [-1.0], [1.0], 0.0)
    with pytest.raises(ValueError):
        FeasibilityProblem(quad_surrogate, [0.01], [-1.0], [1.0], 0.1, exclusions=[[3.0]])


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(backend="smt")
    with pytest.raises(ValueError):
        SolverConfig(delta=0.0)


def test_delta_warning(quad_surrogate):
    with pytest.warns(RuntimeWarning, match="delta"):
        enumerate_candidates(quad_surrogate, [0.01], [-1.0], [1.0], 0.5, SolverConfig(delta=0.01))


def test_exclusion_respected(quad_surrogate):
    prob = FeasibilityProblem(quad_surrogate, [0.01], [-1.0], [1.0], 0.3, exclusions=[[0.5]])
    res = solve_once(prob, SolverConfig(delta=1e-4))
    assert res.found and res.theta[0] < 0 and res.min_dist >= 0.3 - 1e-4


# -------------------------------------------------------------- enumerate

def test_large_separation_gives_single_candidate():
    cs = enumerate_candidates(_zero_surrogate(1), [1.0], [0.0], [1.0], 2.0, SolverConfig())
    assert cs.r_cand == 1 and cs.termination == "exhausted" and cs.certified


def _greedy_packing_counts(b, trials=500, n=1001, seed=0):
    """Sizes of maximal b-separated subsets of [0, 1] built in random order on a fine grid."""
    rng = np.random.default_rng(seed)
    x = np.linspace(0, 1, n)
    counts = set()
    for _ in range(trials):
        chosen = []
        for p in rng.permutation(x):
            if all(abs(p - q) >= b for q in chosen):
                chosen.append(p)
        counts.add(len(chosen))
    return counts


def test_packing_count_within_greedy_oracle():
    oracle = _greedy_packing_counts(0.4)
    assert oracle == {2, 3}
    cs = enumerate_candidates(_zero_surrogate(1), [1.0], [0.0], [1.0], 0.4, SolverConfig())
    assert cs.termination == "exhausted"
    assert cs.r_cand in oracle


def test_quadratic_enumeration_covers_both_roots(quad_surrogate):
    cs = enumerate_candidates(quad_surrogate, [0.01], [-1.0], [1.0], 0.05, SolverConfig(delta=1e-4))
    assert cs.termination == "exhausted"
    for root in (-0.5, 0.5):
        assert verify_coverage(cs, [root])[0]
    assert validate_candidates(cs, quad_surrogate, [0.01]) == []


def _fitted_bumps():
    env = synthetic_env(BUMPS)
    ev = ObjectiveEvaluator(env, Architecture(((1, 1),)), 0, 0.0, 1)
    grid = build_grid([-1, -1], [1, 1], 0.05)
    sur, budget, _ = build_surrogate(ev, grid, 0.005, feature_dim=256)
    return env, sur, budget


def _dense_maxima(env, n=801):
    g = np.linspace(-1, 1, n)
    J = env.theta_objective(np.stack(np.meshgrid(g, g, indexing="ij"), -1))
    core = J[1:-1, 1:-1]
    is_max = np.ones_like(core, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                is_max &= core > J[1 + di:n - 1 + di, 1 + dj:n - 1 + dj]
    ii, jj = np.nonzero(is_max)
    return np.stack([g[1 + ii], g[1 + jj]], 1)


def test_three_bump_landscape_coverage():
    env, sur, budget = _fitted_bumps()
    maxima = _dense_maxima(env)
    assert len(maxima) == 3
    cs = enumerate_candidates(sur, budget, [-1, -1], [1, 1], 0.08, SolverConfig(delta=1e-4))
    assert cs.termination == "exhausted"
    for m in maxima:
        covered, d = verify_coverage(cs, m)
        assert covered, (m, d)
    assert validate_candidates(cs, sur, budget.e) == []


def test_coverage_of_feasible_grid_points():
    _, sur, budget = _fitted_bumps()
    cs = enumerate_candidates(sur, budget, [-1, -1], [1, 1], 0.08, SolverConfig(delta=1e-4))
    g = np.linspace(-1, 1, 401)
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    feas = pts[np.all(np.abs(sur.predict(pts)) <= budget.e, axis=1)]
    assert len(feas) > 0
    d = np.min(np.linalg.norm(feas[:, None] - cs.candidates[None], axis=2), axis=1)
    assert d.max() <= cs.b_sep


@settings(max_examples=25)
@given(st.floats(-0.6, 0.6), st.floats(0.5, 2.0), st.floats(0.02, 0.2), st.floats(0.05, 0.5))
def test_separation_and_feasibility_invariants(b, a, e, b_sep):
    sur = QuadraticSurrogate(a, -b * b * a)
    cs = enumerate_candidates(sur, [e], [-1.0], [1.0], b_sep, SolverConfig(delta=1e-4))
    assert validate_candidates(cs, sur, [e]) == []
    if cs.r_cand > 1:
        x = np.sort(cs.candidates[:, 0])
        assert np.min(np.diff(x)) >= b_sep - 1e-4


def test_interval_backend_is_deterministic():
    _, sur, budget = _fitted_bumps()
    a = enumerate_candidates(sur, budget, [-1, -1], [1, 1], 0.1, SolverConfig())
    b = enumerate_candidates(sur, budget, [-1, -1], [1, 1], 0.1, SolverConfig())
    np.testing.assert_array_equal(a.candidates, b.candidates)


def test_multistart_deterministic_given_seed(quad_surrogate):
    cfg = SolverConfig(backend="multistart", batch=4, seed=7, max_restarts=8)
    a = enumerate_candidates(quad_surrogate, [0.01], [-1.0], [1.0], 0.01, cfg)
    b = enumerate_candidates(quad_surrogate, [0.01], [-1.0], [1.0], 0.01, cfg)
    np.testing.assert_array_equal(a.candidates, b.candidates)
    assert a.termination == "unknown" and not a.certified


def test_max_candidates_flags_budget_exceeded():
    cs = enumerate_candidates(_zero_surrogate(1), [1.0], [0.0], [1.0], 0.01,
                              SolverConfig(max_candidates=5))
    assert cs.r_cand == 5 and cs.termination == "budget_exceeded" and not cs.certified


def test_box_limit_flags_budget_exceeded(quad_surrogate):
    cs = enumerate_candidates(quad_surrogate, [0.01], [-1.0], [1.0], 0.01,
                              SolverConfig(delta=1e-6, max_boxes=10, batch=2))
    assert cs.termination == "budget_exceeded"


# ---------------------------------------------------------- verification

def _cs(points, b_sep=0.1):
    pts = np.asarray(points, dtype=float)
    return CandidateSet(pts, np.zeros(len(pts)), np.full(len(pts), np.inf), "exhausted", "interval_bnp", b_sep, 1e-3)


def test_verify_coverage_contains_truth():
    arch = Architecture(((1, 1),))
    th = np.array([0.2, -0.4])
    assert verify_coverage(_cs([[1.0, 1.0], th]), PolicyParams(arch, th)) == (True, 0.0)


def test_verify_coverage_boundary_inclusive():
    covered, d = verify_coverage(_cs([[0.25]], b_sep=0.25), [0.0])
    assert covered and d == 0.25


def test_verify_coverage_empty():
    assert verify_coverage(_cs(np.zeros((0, 2))), [0.0, 0.0]) == (False, float("inf"))


def test_validator_flags_violations(quad_surrogate):
    bad = _cs([[0.0], [0.05]], b_sep=0.1)
    probs = validate_candidates(bad, quad_surrogate, [0.01])
    assert any("closer" in p for p in probs) and any("violated" in p for p in probs)


def test_candidates_round_trip(tmp_path, quad_surrogate):
    cs = enumerate_candidates(quad_surrogate, [0.01], [-1.0], [1.0], 0.05, SolverConfig(delta=1e-4))
    save_candidates(tmp_path / "c.jsonl", tmp_path / "s.json", cs)
    back = load_candidates(tmp_path / "c.jsonl", tmp_path / "s.json")
    np.testing.assert_array_equal(back.candidates, cs.candidates)
    np.testing.assert_array_equal(back.min_dists, cs.min_dists)
    assert back.summary() == cs.summary()
