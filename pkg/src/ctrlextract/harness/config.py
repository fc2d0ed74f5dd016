"""Run configuration: nested dataclasses loaded from YAML with strict keys."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

__all__ = [
    "ConfigError",
    "EnvConfig",
    "PolicyConfig",
    "ObjectiveConfig",
    "BoxConfig",
    "TrainerConfig",
    "SurrogateConfig",
    "AttackConfig",
    "SolverSection",
    "SeedConfig",
    "RunConfig",
    "load_config",
    "dump_config",
    "default_config",
    "config_hash",
]

PRESETS = ("pendulum", "mountain_car", "synthetic")


class ConfigError(ValueError):
    pass


@dataclass
class EnvConfig:
    preset: str = "pendulum"
    params: dict = field(default_factory=dict)
    # synthetic only: analytic landscape descriptor
    objective: dict | None = None
    # perturbed model constants for the attacker's copy of the plant
    attacker_overrides: dict = field(default_factory=dict)
    # externally argued bound on |J_attacker - J|, added to the statistical bound
    extra_noise_bound: float = 0.0


@dataclass
class PolicyConfig:
    layers: list = field(default_factory=lambda: [[3, 1]])
    output_activation: str = "tanh"
    output_scale: float = 2.0
    bias: bool = True
    hidden_activation: str = "relu"


@dataclass
class ObjectiveConfig:
    horizon: int = 40
    discount: float = 0.95
    rollouts_per_eval: int = 16
    confidence: float = 0.99
    noise_method: str = "hoeffding"
    noise_probes: int = 16


@dataclass
class BoxConfig:
    low: float | list = -1.0
    high: float | list = 1.0


@dataclass
class TrainerConfig:
    steps: int = 300
    learning_rate: float = 0.05
    batch_rollouts: int = 16
    init_scale: float = 0.5
    fd_step: float = 1e-3
    tolerance: float = 1e-3
    max_step: float | None = 0.1
    init: list | None = None


@dataclass
class SurrogateConfig:
    c: float = 0.05
    eta: float = 0.25
    grid_mode: str = "full"
    grid_points: int | None = None
    grid_cap: int = 200_000
    feature_dim: int = 256
    ridge: float = 1e-6
    dictionary: list | None = None
    safety_factor: float = 1.5
    constants_samples: int = 2000
    theoretical_cap: bool = True


@dataclass
class AttackConfig:
    psi: float = 0.04
    b_sep: float | None = None
    G: float | None = None
    n_observations: int = 150
    sweep_states: int = 10_000


@dataclass
class SolverSection:
    backend: str = "interval_bnp"
    delta: float = 1e-3
    max_candidates: int = 50_000
    max_boxes: int = 5_000_000
    max_restarts: int = 64
    batch: int = 256


@dataclass
class SeedConfig:
    train: int = 0
    objective: int = 1
    features: int = 2
    constants: int = 3
    solver: int = 4
    trajectory: int = 5
    sweep: int = 6
    grid: int = 7


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    theta_box: BoxConfig = field(default_factory=BoxConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    solver: SolverSection = field(default_factory=SolverSection)
    seeds: SeedConfig = field(default_factory=SeedConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def n_params(self) -> int:
        return sum(o * (i + int(self.policy.bias)) for i, o in self.policy.layers)

    def box(self):
        l = self.n_params()
        low = np.broadcast_to(np.asarray(self.theta_box.low, dtype=float), (l,)).copy()
        high = np.broadcast_to(np.asarray(self.theta_box.high, dtype=float), (l,)).copy()
        return low, high

    def check_separation(self, G: float | None) -> float:
        """Resolve b_sep and enforce b_sep <= psi / G."""
        G = self.attack.G if G is None else G
        if self.attack.b_sep is None:
            if G is None:
                raise ConfigError("b_sep defaults to psi / G, but G is not known yet")
            return self.attack.psi / G
        if G is not None and self.attack.b_sep > self.attack.psi / G * (1 + 1e-12):
            raise ConfigError(f"b_sep={self.attack.b_sep} exceeds psi/G={self.attack.psi / G:.6g}")
        return float(self.attack.b_sep)


def _build(cls, data, path: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{path}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _positive(path, value, allow_zero=False):
    ok = value >= 0 if allow_zero else value > 0
    if not isinstance(value, (int, float)) or isinstance(value, bool) or not ok:
        raise ConfigError(f"{path} must be {'non-negative' if allow_zero else 'positive'}, got {value!r}")


def validate(cfg: RunConfig) -> RunConfig:
    e = cfg.env
    if e.preset not in PRESETS:
        raise ConfigError(f"env.preset must be one of {PRESETS}")
    if e.preset == "synthetic" and not e.objective:
        raise ConfigError("synthetic preset needs env.objective")
    if e.preset != "synthetic" and e.objective:
        raise ConfigError("env.objective is only used by the synthetic preset")
    _positive("env.extra_noise_bound", e.extra_noise_bound, allow_zero=True)

    p = cfg.policy
    try:
        layers = [tuple(int(x) for x in pair) for pair in p.layers]
    except (TypeError, ValueError):
        raise ConfigError("policy.layers must be a list of [input_dim, output_dim] pairs") from None
    if not layers or any(len(pair) != 2 or min(pair) < 1 for pair in layers):
        raise ConfigError("policy.layers must be a non-empty list of positive [input_dim, output_dim] pairs")
    for (_, o), (i, _) in zip(layers[:-1], layers[1:]):
        if o != i:
            raise ConfigError(f"policy.layers not composable: output {o} feeds input {i}")
    if p.output_activation not in ("identity", "tanh"):
        raise ConfigError("policy.output_activation must be 'identity' or 'tanh'")
    _positive("policy.output_scale", p.output_scale)

    o = cfg.objective
    if not isinstance(o.horizon, int) or o.horizon < 0:
        raise ConfigError("objective.horizon must be a non-negative integer")
    if not 0 <= o.discount < 1:
        raise ConfigError("objective.discount must lie in [0, 1)")
    if not 0 < o.confidence < 1:
        raise ConfigError("objective.confidence must lie in (0, 1)")
    if o.noise_method not in ("hoeffding", "bernstein"):
        raise ConfigError("objective.noise_method must be 'hoeffding' or 'bernstein'")
    if o.noise_probes < 10:
        raise ConfigError("objective.noise_probes must be at least 10")
    _positive("objective.rollouts_per_eval", o.rollouts_per_eval)

    try:
        low, high = cfg.box()
    except ValueError:
        raise ConfigError("theta_box bounds must be scalars or length-l lists") from None
    if (high <= low).any():
        raise ConfigError("theta_box must have positive width on every axis")

    t = cfg.trainer
    for name in ("steps", "learning_rate", "batch_rollouts", "init_scale", "fd_step", "tolerance"):
        _positive(f"trainer.{name}", getattr(t, name))

    s = cfg.surrogate
    for name in ("c", "eta", "feature_dim", "grid_cap", "safety_factor", "constants_samples"):
        _positive(f"surrogate.{name}", getattr(s, name))
    _positive("surrogate.ridge", s.ridge, allow_zero=True)
    if s.grid_mode not in ("full", "sparse"):
        raise ConfigError("surrogate.grid_mode must be 'full' or 'sparse'")

    a = cfg.attack
    _positive("attack.psi", a.psi)
    if a.b_sep is not None:
        _positive("attack.b_sep", a.b_sep)
    if a.G is not None:
        _positive("attack.G", a.G)
    if a.n_observations < 0 or a.sweep_states < 1:
        raise ConfigError("attack.n_observations must be >= 0 and attack.sweep_states >= 1")
    if a.b_sep is not None and a.G is not None:
        cfg.check_separation(None)

    v = cfg.solver
    if v.backend not in ("interval_bnp", "multistart"):
        raise ConfigError("solver.backend must be 'interval_bnp' or 'multistart'")
    for name in ("delta", "max_candidates", "max_boxes", "max_restarts", "batch"):
        _positive(f"solver.{name}", getattr(v, name))
    return cfg


def from_dict(data: dict | None) -> RunConfig:
    return validate(_build(RunConfig, data or {}, "config"))


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    try:
        return from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(cfg: RunConfig, path=None) -> str:
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)
    if path is not None:
        Path(path).write_text(text)
    return text


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def default_config(preset: str = "pendulum") -> RunConfig:
    """Defaults per preset; every value is printed by ``config-init``."""
    if preset == "pendulum":
        cfg = RunConfig()
        cfg.env.params = {"mass": 1.0, "length": 1.0, "gravity": 10.0, "dt": 0.05, "noise_scale": 0.0}
        cfg.policy = PolicyConfig(layers=[[3, 1]], output_activation="tanh", output_scale=2.0)
        cfg.attack.psi = 0.04
        cfg.solver.backend = "multistart"
        cfg.solver.max_candidates = 3000
    elif preset == "mountain_car":
        cfg = RunConfig()
        cfg.env = EnvConfig(preset="mountain_car", params={"dt": 1.0, "goal_position": 0.45, "noise_scale": 0.0})
        cfg.policy = PolicyConfig(layers=[[2, 1]], output_activation="tanh", output_scale=1.0)
        cfg.objective = ObjectiveConfig(horizon=200, discount=0.99, rollouts_per_eval=16)
        cfg.attack.psi = 0.55
        cfg.solver.backend = "multistart"
        cfg.solver.max_candidates = 3000
    elif preset == "synthetic":
        cfg = RunConfig()
        cfg.env = EnvConfig(
            preset="synthetic",
            params={"state_dim": 1, "action_dim": 1},
            objective={"family": "polynomial", "terms": [[-1.0, [2, 0]], [-1.0, [0, 2]]],
                       "low": [-1.0, -1.0], "high": [1.0, 1.0]},
        )
        cfg.policy = PolicyConfig(layers=[[1, 1]], output_activation="identity", output_scale=1.0)
        cfg.objective = ObjectiveConfig(horizon=0, discount=0.0, rollouts_per_eval=1)
        cfg.surrogate = SurrogateConfig(c=0.01, eta=0.02, feature_dim=128, theoretical_cap=False)
        cfg.attack.psi = 0.2
        cfg.trainer = TrainerConfig(steps=500, learning_rate=0.2, batch_rollouts=1, init=[0.5, -0.3])
    else:
        raise ConfigError(f"unknown preset {preset!r}; choose from {PRESETS}")
    return validate(cfg)
