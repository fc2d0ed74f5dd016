"""Victim policy generation by projected finite-difference gradient ascent.

Only the stationary point matters to the attack, so a sample-average
objective (a fixed set of common-random-number episodes) is ascended with
central differences instead of a full actor-critic method.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .envsim import Environment
from .objective import ObjectiveEvaluator, evaluate_jbar_many
from .policy import Architecture, PolicyParams

__all__ = ["TrainConfig", "TrainResult", "train", "fd_gradient", "write_train_log"]


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    learning_rate: float = 0.05
    batch_rollouts: int = 32
    init_scale: float = 0.5
    seed: int = 0
    theta_max: float = 1.0
    fd_step: float = 1e-3
    tolerance: float = 1e-3
    max_step: float | None = None
    init: tuple[float, ...] | None = None

    def __post_init__(self):
        for name in ("steps", "learning_rate", "batch_rollouts", "init_scale", "theta_max", "fd_step", "tolerance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class TrainResult:
    policy: PolicyParams
    converged: bool
    grad_norm: float
    jbar: float
    history: list[tuple[int, float, float]] = field(default_factory=list)


def fd_gradient(ev: ObjectiveEvaluator, theta: np.ndarray, h: float) -> tuple[float, np.ndarray]:
    """(J-bar(theta), central-difference gradient) in one batched evaluation."""
    l = theta.size
    eye = np.eye(l) * h
    pts = np.vstack([theta[None], theta + eye, theta - eye])
    vals = evaluate_jbar_many(ev, pts)
    return float(vals[0]), (vals[1:l + 1] - vals[l + 1:]) / (2 * h)


def _projected(grad, theta, lo, hi):
    g = grad.copy()
    g[(theta <= lo) & (g < 0)] = 0.0
    g[(theta >= hi) & (g > 0)] = 0.0
    return g


def train(env: Environment, arch: Architecture, ev: ObjectiveEvaluator, cfg: TrainConfig) -> TrainResult:
    if ev.env is not env or ev.arch != arch:
        ev = replace(ev, env=env, arch=arch)
    ev = replace(ev, rollouts_per_eval=cfg.batch_rollouts, base_seed=cfg.seed)
    l = arch.n_params
    lo, hi = -cfg.theta_max, cfg.theta_max
    if cfg.init is not None:
        theta = np.array(cfg.init, dtype=float)
        if theta.size != l:
            raise ValueError(f"init has length {theta.size}, architecture needs {l}")
    else:
        theta = np.random.default_rng(cfg.seed).uniform(-cfg.init_scale, cfg.init_scale, l)
    theta = np.clip(theta, lo, hi)

    history = []
    best = (-np.inf, theta.copy(), np.inf)
    for step in range(cfg.steps + 1):
        jbar, grad = fd_gradient(ev, theta, cfg.fd_step)
        pg = _projected(grad, theta, lo, hi)
        gnorm = float(np.max(np.abs(pg)))
        history.append((step, jbar, gnorm))
        if jbar > best[0]:
            best = (jbar, theta.copy(), gnorm)
        if gnorm <= cfg.tolerance:
            return TrainResult(PolicyParams(arch, theta), True, gnorm, jbar, history)
        if step == cfg.steps:
            break
        update = cfg.learning_rate * pg
        if cfg.max_step is not None:
            update = np.clip(update, -cfg.max_step, cfg.max_step)
        theta = np.clip(theta + update, lo, hi)

    warnings.warn(f"training did not reach stationarity tolerance {cfg.tolerance} in {cfg.steps} steps",
                  RuntimeWarning, stacklevel=2)
    jbar, theta, gnorm = best
    return TrainResult(PolicyParams(arch, theta), False, gnorm, jbar, history)


def write_train_log(path, result: TrainResult) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "jbar", "grad_norm"])
        for step, jbar, g in result.history:
            wr.writerow([step, repr(jbar), repr(g)])
