"""Stochastic discrete-time plants with reward functions.

Every environment is vectorised: state arrays carry arbitrary leading batch
axes and the process noise is supplied explicitly as standard-normal draws, so
one seeded noise tape can be replayed under many policies (common random
numbers).
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .policy import Architecture, PolicyParams, evaluate_batch

__all__ = [
    "Environment",
    "Polynomial",
    "GaussianMixture",
    "pendulum_env",
    "mountain_car_env",
    "synthetic_env",
    "rollout",
    "rollout_batch",
    "episode_noise",
    "simulate",
    "Trajectory",
    "write_trajectory_csv",
    "read_trajectory_csv",
]


@dataclass(frozen=True, eq=False)
class Environment:
    name: str
    state_dim: int
    action_dim: int
    noise_dim: int
    step_fn: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    reward_fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    initial_fn: Callable[[np.random.Generator, int], np.ndarray]
    state_sampler: Callable[[np.random.Generator, int], np.ndarray]
    action_low: np.ndarray
    action_high: np.ndarray
    reward_bound: float
    process_noise_scale: float = 0.0
    integration_step: float = 1.0
    deterministic: bool = False
    terminal_fn: Callable[[np.ndarray], np.ndarray] | None = None
    # Synthetic landscapes expose J(theta) directly (single-step horizon).
    theta_objective: Callable[[np.ndarray], np.ndarray] | None = None
    known_noise_bound: float = 0.0
    derivative: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    descriptor: object = None
    params: dict = field(default_factory=dict)

    def clamp(self, actions: np.ndarray) -> np.ndarray:
        return np.clip(actions, self.action_low, self.action_high)

    def step(self, state, action, rng: np.random.Generator) -> np.ndarray:
        """Sample s' ~ P(. | s, a) using noise drawn from ``rng``."""
        state = np.asarray(state, dtype=float)
        w = rng.standard_normal(state.shape[:-1] + (self.noise_dim,))
        return self.step_fn(state, self.clamp(np.asarray(action, dtype=float)), w)

    def reward(self, state, action) -> np.ndarray:
        return self.reward_fn(np.asarray(state, dtype=float), self.clamp(np.asarray(action, dtype=float)))

    def initial(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        return self.initial_fn(rng, n)

    def sample_states(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.state_sampler(rng, n)


def _require_positive(**kwargs):
    for name, value in kwargs.items():
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value!r}")


# ---------------------------------------------------------------------------
# Presets


def pendulum_env(
    mass: float = 1.0,
    length: float = 1.0,
    gravity: float = 10.0,
    dt: float = 0.05,
    noise_scale: float = 0.0,
    *,
    max_speed: float = 8.0,
    max_torque: float = 2.0,
    init_angle: float = np.pi,
    init_speed: float = 1.0,
    init_state: Sequence[float] | None = None,
    coupled_kinematics: bool = False,
) -> Environment:
    """Inverted pendulum with state (cos b, sin b, b_dot), b = 0 upright.

    The default kinematics use the linear state-space matrix as published,
    i.e. d/dt (x, y) = (-y, x).  ``coupled_kinematics=True`` switches to the
    physical rotation d/dt (x, y) = b_dot * (-y, x).

    Initial angles and speeds are uniform on [-init_angle, init_angle] and
    [-init_speed, init_speed] unless ``init_state = (b, b_dot)`` fixes them;
    a fixed start with ``noise_scale = 0`` makes the plant deterministic.
    """
    _require_positive(mass=mass, length=length, gravity=gravity, dt=dt)
    if noise_scale < 0:
        raise ValueError("noise_scale must be non-negative")
    g_coef = 3.0 * gravity / (2.0 * length)
    u_coef = 3.0 / (mass * length**2)

    def derivative(s, u):
        x, y, bd = s[..., 0], s[..., 1], s[..., 2]
        rate = bd if coupled_kinematics else 1.0
        return np.stack([-y * rate, x * rate, g_coef * y + u_coef * u[..., 0]], axis=-1)

    def step_fn(s, u, w):
        nxt = s + dt * derivative(s, u)
        bd = np.clip(nxt[..., 2] + noise_scale * w[..., 0], -max_speed, max_speed)
        return np.concatenate([nxt[..., :2], bd[..., None]], axis=-1)

    def reward_fn(s, u):
        beta = np.arctan2(s[..., 1], s[..., 0])
        return -(beta**2 + 0.1 * s[..., 2] ** 2 + 0.001 * u[..., 0] ** 2)

    def _from_angles(beta, bd):
        return np.stack([np.cos(beta), np.sin(beta), bd], axis=-1)

    def initial_fn(rng, n):
        if init_state is not None:
            return np.repeat(_from_angles(np.array([float(init_state[0])]), np.array([float(init_state[1])])), n, 0)
        beta = rng.uniform(-init_angle, init_angle, size=n)
        bd = rng.uniform(-init_speed, init_speed, size=n)
        return _from_angles(beta, bd)

    def state_sampler(rng, n):
        return _from_angles(rng.uniform(-np.pi, np.pi, n), rng.uniform(-max_speed, max_speed, n))

    return Environment(
        name="pendulum",
        state_dim=3,
        action_dim=1,
        noise_dim=1,
        step_fn=step_fn,
        reward_fn=reward_fn,
        initial_fn=initial_fn,
        state_sampler=state_sampler,
        action_low=np.array([-max_torque]),
        action_high=np.array([max_torque]),
        reward_bound=float(np.pi**2 + 0.1 * max_speed**2 + 0.001 * max_torque**2),
        process_noise_scale=noise_scale,
        integration_step=dt,
        deterministic=init_state is not None and noise_scale == 0,
        params=dict(mass=mass, length=length, gravity=gravity, dt=dt, noise_scale=noise_scale,
                    max_speed=max_speed, max_torque=max_torque, init_angle=init_angle,
                    init_speed=init_speed, init_state=None if init_state is None else list(init_state),
                    coupled_kinematics=coupled_kinematics),
        derivative=derivative,
    )


def mountain_car_env(
    dt: float = 1.0,
    goal_position: float = 0.45,
    noise_scale: float = 0.0,
    *,
    min_position: float = -1.2,
    max_position: float = 0.6,
    max_speed: float = 0.07,
    max_force: float = 1.0,
    init_low: float = -0.6,
    init_high: float = -0.4,
) -> Environment:
    """Mountain car, state (p, v); inelastic walls zero the velocity on contact."""
    _require_positive(dt=dt)
    if noise_scale < 0:
        raise ValueError("noise_scale must be non-negative")
    if not min_position < goal_position <= max_position:
        raise ValueError("goal_position must lie inside the position bounds")

    def derivative(s, u):
        p, v = s[..., 0], s[..., 1]
        dv = 0.001 * u[..., 0] - 0.0025 * np.cos(3 * p) - 0.0025 * v**2 * np.sin(3 * p)
        return np.stack([v, dv], axis=-1)

    def step_fn(s, u, w):
        nxt = s + dt * derivative(s, u)
        v = np.clip(nxt[..., 1] + noise_scale * w[..., 0], -max_speed, max_speed)
        p = nxt[..., 0]
        hit = (p <= min_position) | (p >= max_position)
        p = np.clip(p, min_position, max_position)
        v = np.where(hit, 0.0, v)
        return np.stack([p, v], axis=-1)

    def reward_fn(s, u):
        return np.where(s[..., 0] >= goal_position, 100.0, -0.1 * u[..., 0] ** 2)

    def terminal_fn(s):
        return s[..., 0] >= goal_position

    def initial_fn(rng, n):
        return np.stack([rng.uniform(init_low, init_high, n), np.zeros(n)], axis=-1)

    def state_sampler(rng, n):
        return np.stack([rng.uniform(min_position, max_position, n),
                         rng.uniform(-max_speed, max_speed, n)], axis=-1)

    return Environment(
        name="mountain_car",
        state_dim=2,
        action_dim=1,
        noise_dim=1,
        step_fn=step_fn,
        reward_fn=reward_fn,
        initial_fn=initial_fn,
        state_sampler=state_sampler,
        action_low=np.array([-max_force]),
        action_high=np.array([max_force]),
        reward_bound=max(100.0, 0.1 * max_force**2),
        process_noise_scale=noise_scale,
        integration_step=dt,
        terminal_fn=terminal_fn,
        params=dict(dt=dt, goal_position=goal_position, noise_scale=noise_scale,
                    min_position=min_position, max_position=max_position, max_speed=max_speed,
                    max_force=max_force, init_low=init_low, init_high=init_high),
        derivative=derivative,
    )


# ---------------------------------------------------------------------------
# Analytic landscapes


@dataclass(frozen=True)
class Polynomial:
    """Sum of monomials ``coef * prod(theta_i ** exps_i)`` over a box."""

    terms: tuple[tuple[float, tuple[int, ...]], ...]
    low: tuple[float, ...]
    high: tuple[float, ...]

    def __post_init__(self):
        dim = len(self.low)
        if len(self.high) != dim or any(len(e) != dim for _, e in self.terms):
            raise ValueError("inconsistent polynomial dimensions")
        if any(min(e) < 0 for _, e in self.terms if e):
            raise ValueError("negative exponents are not supported")

    @property
    def dim(self) -> int:
        return len(self.low)

    def value(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(theta.shape[:-1])
        for coef, exps in self.terms:
            out = out + coef * np.prod(theta ** np.array(exps), axis=-1)
        return out

    def gradient(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(theta.shape)
        for coef, exps in self.terms:
            exps = np.array(exps)
            for i in np.nonzero(exps)[0]:
                e = exps.copy()
                e[i] -= 1
                out[..., i] += coef * exps[i] * np.prod(theta**e, axis=-1)
        return out


@dataclass(frozen=True)
class GaussianMixture:
    """``sum_k w_k exp(-|theta - mu_k|^2 / (2 s_k^2))`` over a box."""

    centers: tuple[tuple[float, ...], ...]
    widths: tuple[float, ...]
    weights: tuple[float, ...]
    low: tuple[float, ...]
    high: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.centers) == len(self.widths) == len(self.weights)):
            raise ValueError("centers, widths and weights must have equal length")
        if any(len(c) != len(self.low) for c in self.centers):
            raise ValueError("center dimension mismatch")
        if any(w <= 0 for w in self.widths):
            raise ValueError("widths must be positive")

    @property
    def dim(self) -> int:
        return len(self.low)

    def _bumps(self, theta):
        theta = np.asarray(theta, dtype=float)
        mu = np.asarray(self.centers)
        s = np.asarray(self.widths)
        diff = theta[..., None, :] - mu
        return diff, s, np.asarray(self.weights) * np.exp(-np.sum(diff**2, -1) / (2 * s**2))

    def value(self, theta) -> np.ndarray:
        return self._bumps(theta)[2].sum(-1)

    def gradient(self, theta) -> np.ndarray:
        diff, s, b = self._bumps(theta)
        return -np.sum((b / s**2)[..., None] * diff, axis=-2)


def descriptor_from_dict(spec: dict):
    family = spec.get("family")
    if family == "polynomial":
        terms = tuple((float(c), tuple(int(e) for e in exps)) for c, exps in spec["terms"])
        return Polynomial(terms, tuple(map(float, spec["low"])), tuple(map(float, spec["high"])))
    if family == "gaussian_mixture":
        return GaussianMixture(
            tuple(tuple(map(float, c)) for c in spec["centers"]),
            tuple(map(float, spec["widths"])),
            tuple(map(float, spec["weights"])),
            tuple(map(float, spec["low"])),
            tuple(map(float, spec["high"])),
        )
    raise ValueError(f"unsupported objective family {family!r}; use 'polynomial' or 'gaussian_mixture'")


def _hash_noise(theta: np.ndarray, seed: int) -> np.ndarray:
    """Deterministic pseudo-noise in [-1, 1] keyed on the exact bytes of theta."""
    flat = np.ascontiguousarray(theta, dtype=float).reshape(-1, theta.shape[-1])
    salt = int(seed).to_bytes(8, "little", signed=True)
    u = np.array([zlib.crc32(row.tobytes() + salt) for row in flat], dtype=float)
    return (2.0 * u / 0xFFFFFFFF - 1.0).reshape(theta.shape[:-1])


def synthetic_env(
    objective_spec,
    *,
    state_dim: int = 1,
    action_dim: int = 1,
    state_low: float = -1.0,
    state_high: float = 1.0,
    noise_amplitude: float = 0.0,
    noise_seed: int = 0,
) -> Environment:
    """Oracle environment whose objective J(theta) is ``objective_spec`` exactly.

    The plant is memoryless (every state is drawn uniformly from the state
    box); the state and action dimensions only fix the policy shape used when
    comparing policies on observed or sampled states.  With
    ``noise_amplitude > 0`` every evaluation is corrupted by a deterministic,
    non-smooth perturbation bounded by that amplitude.
    """
    if isinstance(objective_spec, dict):
        objective_spec = descriptor_from_dict(objective_spec)
    if not isinstance(objective_spec, (Polynomial, GaussianMixture)):
        raise ValueError("objective_spec must be a Polynomial or GaussianMixture descriptor")
    if noise_amplitude < 0:
        raise ValueError("noise_amplitude must be non-negative")
    desc = objective_spec

    def theta_objective(theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != desc.dim:
            raise ValueError(f"landscape has dimension {desc.dim}, got theta of length {theta.shape[-1]}")
        val = desc.value(theta)
        if noise_amplitude > 0:
            val = val + noise_amplitude * _hash_noise(theta, noise_seed)
        return val

    def state_sampler(rng, n):
        return rng.uniform(state_low, state_high, size=(n, state_dim))

    return Environment(
        name="synthetic",
        state_dim=state_dim,
        action_dim=action_dim,
        noise_dim=state_dim,
        # the plant is memoryless: each step draws a fresh state from the box
        step_fn=lambda s, a, w: state_low + (state_high - state_low) * ndtr(w),
        reward_fn=lambda s, a: np.zeros(s.shape[:-1]),
        initial_fn=state_sampler,
        state_sampler=state_sampler,
        action_low=np.full(action_dim, -np.inf),
        action_high=np.full(action_dim, np.inf),
        reward_bound=0.0,
        deterministic=True,
        theta_objective=theta_objective,
        known_noise_bound=float(noise_amplitude),
        descriptor=desc,
        params=dict(noise_amplitude=noise_amplitude, noise_seed=noise_seed),
    )


# ---------------------------------------------------------------------------
# Rollouts


def episode_noise(env: Environment, horizon: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Initial state and the (horizon + 1, noise_dim) noise tape for one seed."""
    rng = np.random.default_rng(seed)
    s0 = env.initial(rng, 1)[0]
    w = rng.standard_normal((horizon + 1, env.noise_dim))
    return s0, w


def rollout_batch(
    env: Environment,
    arch: Architecture,
    thetas: np.ndarray,
    horizon: int,
    discount: float,
    seeds: Sequence,
) -> np.ndarray:
    """Discounted returns, shape (P, len(seeds)), for P parameter vectors.

    All parameter vectors replay the same episodes (one per seed).
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if not 0.0 <= discount < 1.0:
        raise ValueError("discount must lie in [0, 1)")
    if env.theta_objective is not None:
        val = env.theta_objective(thetas)
        return np.repeat(val[:, None], len(seeds), axis=1)
    if arch.input_dim != env.state_dim or arch.output_dim != env.action_dim:
        raise ValueError("policy input/output dimensions do not match the environment")

    tapes = [episode_noise(env, horizon, s) for s in seeds]
    s = np.broadcast_to(np.stack([t[0] for t in tapes]), (len(thetas), len(seeds), env.state_dim)).copy()
    noise = np.stack([t[1] for t in tapes], axis=1)  # (H+1, n, noise_dim)
    total = np.zeros((len(thetas), len(seeds)))
    alive = np.ones_like(total, dtype=bool)
    weight = 1.0
    for k in range(horizon + 1):
        a = env.clamp(evaluate_batch(arch, thetas, s))
        r = env.reward_fn(s, a)
        total += weight * np.where(alive, r, 0.0)
        if env.terminal_fn is not None:
            alive &= ~env.terminal_fn(s)
        if k == horizon:
            break
        s = env.step_fn(s, a, noise[k])
        weight *= discount
    return total


def rollout(env: Environment, policy: PolicyParams, horizon: int, discount: float, seed) -> float:
    """Discounted return of one sampled trajectory."""
    return float(rollout_batch(env, policy.arch, policy.theta[None], horizon, discount, [seed])[0, 0])


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray  # (T, q)
    actions: np.ndarray  # (T, m)
    rewards: np.ndarray  # (T,)

    def __len__(self):
        return len(self.rewards)


def simulate(env: Environment, policy: PolicyParams, horizon: int, seed) -> Trajectory:
    """Closed-loop trajectory for k = 0..horizon (stops early at terminal states)."""
    s0, w = episode_noise(env, horizon, seed)
    s = s0
    states, actions, rewards = [], [], []
    for k in range(horizon + 1):
        a = env.clamp(evaluate_batch(policy.arch, policy.theta[None], s[None, None])[0, 0])
        states.append(s)
        actions.append(a)
        rewards.append(float(env.reward_fn(s, a)))
        if env.terminal_fn is not None and env.terminal_fn(s):
            break
        if k < horizon:
            s = env.step_fn(s, a, w[k])
    return Trajectory(np.array(states), np.array(actions), np.array(rewards))


def write_trajectory_csv(path, traj: Trajectory) -> None:
    q, m = traj.states.shape[1], traj.actions.shape[1]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k"] + [f"s_{i + 1}" for i in range(q)] + [f"a_{i + 1}" for i in range(m)] + ["r"])
        for k in range(len(traj)):
            wr.writerow([k] + [repr(float(v)) for v in traj.states[k]]
                        + [repr(float(v)) for v in traj.actions[k]] + [repr(float(traj.rewards[k]))])


def read_trajectory_csv(path) -> tuple[np.ndarray, Trajectory]:
    """Returns (time indices, trajectory)."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None:
            raise ValueError(f"{path}: empty trajectory file")
        rows = [list(map(float, r)) for r in rd if r]
    s_cols = [i for i, h in enumerate(header) if h.startswith("s_")]
    a_cols = [i for i, h in enumerate(header) if h.startswith("a_")]
    r_col = header.index("r") if "r" in header else None
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    ks = data[:, 0].astype(int)
    rewards = data[:, r_col] if r_col is not None else np.zeros(len(rows))
    return ks, Trajectory(data[:, s_cols], data[:, a_cols], rewards)
