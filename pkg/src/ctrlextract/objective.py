"""Monte Carlo evaluation of the attacker's noisy objective J-bar."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .envsim import Environment, rollout_batch
from .policy import Architecture, PolicyParams

log = logging.getLogger(__name__)

__all__ = [
    "ObjectiveEvaluator",
    "evaluate_jbar",
    "evaluate_jbar_many",
    "rollout_returns",
    "estimate_noise_bound",
    "hoeffding_bound",
    "bernstein_bound",
]


@dataclass(frozen=True)
class ObjectiveEvaluator:
    """J-bar(theta) = mean discounted return over a fixed set of episodes.

    Episode ``i`` is seeded by ``(base_seed, i)`` for every theta, so that two
    evaluations differ only through the policy (common random numbers).
    """

    env: Environment
    arch: Architecture
    horizon: int
    discount: float
    rollouts_per_eval: int = 32
    base_seed: int = 0
    noise_bound: float = 0.0

    def __post_init__(self):
        if self.rollouts_per_eval < 1:
            raise ValueError("rollouts_per_eval must be positive")
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if self.noise_bound < 0:
            raise ValueError("noise_bound must be non-negative")

    @property
    def seeds(self) -> list[tuple[int, int]]:
        return [(int(self.base_seed), i) for i in range(self.rollouts_per_eval)]

    @property
    def dim(self) -> int:
        return self.arch.n_params

    def __call__(self, theta) -> float:
        return evaluate_jbar(self, theta)


def _theta_matrix(ev: ObjectiveEvaluator, thetas) -> np.ndarray:
    if isinstance(thetas, PolicyParams):
        thetas = thetas.theta
    arr = np.atleast_2d(np.asarray(thetas, dtype=float))
    if arr.shape[-1] != ev.arch.n_params:
        raise ValueError(f"theta has length {arr.shape[-1]}, evaluator expects {ev.arch.n_params}")
    return arr


def rollout_returns(ev: ObjectiveEvaluator, thetas, chunk: int = 4096) -> np.ndarray:
    """Per-episode returns, shape (P, rollouts_per_eval)."""
    arr = _theta_matrix(ev, thetas)
    if ev.env.theta_objective is not None:
        return rollout_batch(ev.env, ev.arch, arr, ev.horizon, ev.discount, [0])
    out = []
    n = ev.rollouts_per_eval
    step = max(1, chunk // n)
    for start in range(0, len(arr), step):
        out.append(rollout_batch(ev.env, ev.arch, arr[start:start + step], ev.horizon, ev.discount, ev.seeds))
    log.debug("evaluated %d thetas x %d rollouts", len(arr), n)
    return np.concatenate(out, axis=0)


def evaluate_jbar_many(ev: ObjectiveEvaluator, thetas) -> np.ndarray:
    return rollout_returns(ev, thetas).mean(axis=1)


def evaluate_jbar(ev: ObjectiveEvaluator, theta) -> float:
    return float(evaluate_jbar_many(ev, theta)[0])


def hoeffding_bound(value_range: float, n: int, confidence: float) -> float:
    """Two-sided Hoeffding deviation of an n-sample mean of values in a range."""
    delta = 1.0 - confidence
    return float(value_range * np.sqrt(np.log(2.0 / delta) / (2.0 * n)))


def bernstein_bound(sample_var: float, value_range: float, n: int, confidence: float) -> float:
    """Empirical Bernstein deviation (Maurer and Pontil, 2009), two-sided."""
    delta = 1.0 - confidence
    lg = np.log(4.0 / delta)
    return float(np.sqrt(2.0 * sample_var * lg / n) + 7.0 * value_range * lg / (3.0 * (n - 1)))


def estimate_noise_bound(
    ev: ObjectiveEvaluator,
    probe_thetas,
    confidence: float = 0.99,
    *,
    method: str = "hoeffding",
    value_range: tuple[float, float] | None = None,
) -> tuple[float, ObjectiveEvaluator]:
    """High-confidence bound on |J-bar - J|, maximised over probe parameters.

    ``value_range`` is the a-priori range of a single return; when omitted the
    observed range of each probe's returns is used.  Returns the bound and a
    copy of the evaluator carrying it as ``noise_bound``.
    """
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    arr = _theta_matrix(ev, probe_thetas)
    if len(arr) < 10:
        raise ValueError("need at least 10 probe parameter vectors")
    if method not in ("hoeffding", "bernstein"):
        raise ValueError("method must be 'hoeffding' or 'bernstein'")
    known = float(ev.env.known_noise_bound)
    if ev.env.deterministic:
        return known, replace(ev, noise_bound=known)
    returns = rollout_returns(ev, arr)
    n = returns.shape[1]
    if n < 2:
        raise ValueError("a statistical bound needs rollouts_per_eval >= 2")
    bounds = []
    for row in returns:
        width = value_range[1] - value_range[0] if value_range is not None else float(np.ptp(row))
        if method == "hoeffding":
            bounds.append(hoeffding_bound(width, n, confidence))
        else:
            bounds.append(bernstein_bound(float(np.var(row, ddof=1)), width, n, confidence))
    m_bar = max(bounds) + known
    return m_bar, replace(ev, noise_bound=m_bar)
