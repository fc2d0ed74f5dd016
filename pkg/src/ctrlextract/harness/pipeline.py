"""Pipeline stages with fixed on-disk artifacts under one run directory.

Layout::

    victim/policy.json  victim/train_log.csv  victim/trajectory.csv
    attack/samples.csv  attack/samples_meta.json  attack/surrogate.json
    attack/candidates.jsonl  attack/candidates_summary.json
    attack/shortlist.json  attack/errors.csv
    eval/sweep.csv  report.json

The offline stages (``sample``, ``fit``, ``enumerate``) take only the config
and the attack directory.  They build the attacker's own copy of the plant and
never see the victim policy.
"""

from __future__ import annotations

import csv
import json
import logging
import platform
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from ..enumerator import CandidateSet, SolverConfig, enumerate_candidates, load_candidates, save_candidates, \
    validate_candidates
from ..envsim import Environment, mountain_car_env, pendulum_env, simulate, synthetic_env, write_trajectory_csv
from ..objective import ObjectiveEvaluator, estimate_noise_bound
from ..online import ObservationLog, action_errors, init_filter, report_errors, run_filter, save_filter, \
    write_error_series
from ..policy import Architecture, PolicyParams, SmoothnessConstants, estimate_constants, evaluate_batch, \
    load_policy, save_policy
from ..surrogate import ErrorBudget, KernelSpec, ParameterGrid, build_grid, build_surrogate, load_surrogate, read_samples_csv, \
    save_surrogate, sample_gradients, write_samples_csv
from ..trainer import TrainConfig, train, write_train_log
from .config import ConfigError, RunConfig, config_hash

log = logging.getLogger(__name__)

__all__ = [
    "RunPaths",
    "SolverBudgetExceeded",
    "InvariantViolation",
    "make_env",
    "make_arch",
    "attacker_evaluator",
    "stage_train",
    "stage_simulate",
    "stage_sample",
    "stage_fit",
    "stage_enumerate",
    "stage_filter",
    "stage_evaluate",
    "stage_report",
    "run_offline",
]


class SolverBudgetExceeded(RuntimeError):
    pass


class InvariantViolation(RuntimeError):
    pass


class RunPaths:
    def __init__(self, root):
        self.root = Path(root)

    def _p(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    policy = property(lambda s: s._p("victim", "policy.json"))
    train_log = property(lambda s: s._p("victim", "train_log.csv"))
    trajectory = property(lambda s: s._p("victim", "trajectory.csv"))
    samples = property(lambda s: s._p("attack", "samples.csv"))
    samples_meta = property(lambda s: s._p("attack", "samples_meta.json"))
    surrogate = property(lambda s: s._p("attack", "surrogate.json"))
    candidates = property(lambda s: s._p("attack", "candidates.jsonl"))
    candidates_summary = property(lambda s: s._p("attack", "candidates_summary.json"))
    shortlist = property(lambda s: s._p("attack", "shortlist.json"))
    errors = property(lambda s: s._p("attack", "errors.csv"))
    sweep = property(lambda s: s._p("eval", "sweep.csv"))
    report = property(lambda s: s._p("report.json"))


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"missing artifact {path}; run the producing stage first") from None


# ---------------------------------------------------------------------------
# Construction from config


def make_env(cfg: RunConfig, attacker: bool = False) -> Environment:
    params = dict(cfg.env.params)
    if attacker:
        params.update(cfg.env.attacker_overrides)
    try:
        if cfg.env.preset == "pendulum":
            return pendulum_env(**params)
        if cfg.env.preset == "mountain_car":
            return mountain_car_env(**params)
        return synthetic_env(cfg.env.objective, **params)
    except TypeError as exc:
        raise ConfigError(f"env.params: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"env: {exc}") from exc


def make_arch(cfg: RunConfig) -> Architecture:
    p = cfg.policy
    return Architecture(tuple(tuple(int(x) for x in pair) for pair in p.layers), p.output_activation,
                        float(p.output_scale), bool(p.bias), p.hidden_activation)


def _check_dims(env: Environment, arch: Architecture, cfg: RunConfig):
    if arch.input_dim != env.state_dim or arch.output_dim != env.action_dim:
        raise ConfigError(f"policy maps {arch.input_dim}->{arch.output_dim} but the environment has "
                          f"state_dim={env.state_dim}, action_dim={env.action_dim}")
    desc = env.descriptor
    if desc is not None and getattr(desc, "dim", arch.n_params) != arch.n_params:
        raise ConfigError(f"synthetic landscape has dimension {desc.dim}, policy has {arch.n_params} parameters")


def _evaluator(cfg: RunConfig, env, arch, base_seed: int, rollouts: int) -> ObjectiveEvaluator:
    o = cfg.objective
    return ObjectiveEvaluator(env, arch, o.horizon, o.discount, rollouts, base_seed)


def attacker_evaluator(cfg: RunConfig) -> ObjectiveEvaluator:
    env, arch = make_env(cfg, attacker=True), make_arch(cfg)
    _check_dims(env, arch, cfg)
    return _evaluator(cfg, env, arch, cfg.seeds.objective, cfg.objective.rollouts_per_eval)


def solver_config(cfg: RunConfig) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(s.backend, float(s.delta), int(s.max_candidates), int(s.max_boxes), int(s.max_restarts),
                        int(s.batch), int(cfg.seeds.solver))


# ---------------------------------------------------------------------------
# Victim side


def stage_train(cfg: RunConfig, root) -> PolicyParams:
    paths = RunPaths(root)
    env, arch = make_env(cfg), make_arch(cfg)
    _check_dims(env, arch, cfg)
    low, high = cfg.box()
    if not (np.allclose(low, low[0]) and np.allclose(high, -low)):
        raise ConfigError("training projects onto a symmetric cube; set theta_box.low = -theta_box.high")
    t = cfg.trainer
    tc = TrainConfig(t.steps, t.learning_rate, t.batch_rollouts, t.init_scale, cfg.seeds.train, float(high[0]),
                     t.fd_step, t.tolerance, t.max_step, None if t.init is None else tuple(t.init))
    ev = _evaluator(cfg, env, arch, cfg.seeds.train, t.batch_rollouts)
    start = time.perf_counter()
    res = train(env, arch, ev, tc)
    save_policy(paths.policy, res.policy)
    write_train_log(paths.train_log, res)
    log.info("trained victim: J-bar=%.6g, |grad|=%.3g, converged=%s (%.1fs)", res.jbar, res.grad_norm,
             res.converged, time.perf_counter() - start)
    return res.policy


def stage_simulate(cfg: RunConfig, root, policy_path=None, seed: int | None = None, n: int | None = None):
    """Record a victim trajectory of n observations (default attack.n_observations)."""
    paths = RunPaths(root)
    policy = load_policy(policy_path or paths.policy)
    env = make_env(cfg)
    n = cfg.attack.n_observations if n is None else n
    traj = simulate(env, policy, max(n - 1, 0), cfg.seeds.trajectory if seed is None else seed)
    traj = type(traj)(traj.states[:n], traj.actions[:n], traj.rewards[:n])
    write_trajectory_csv(paths.trajectory, traj)
    return traj


# ---------------------------------------------------------------------------
# Attacker side (no victim access)


def stage_sample(cfg: RunConfig, root) -> dict:
    paths = RunPaths(root)
    start = time.perf_counter()
    ev = attacker_evaluator(cfg)
    env, arch = ev.env, ev.arch
    low, high = cfg.box()
    o, s = cfg.objective, cfg.surrogate

    rng = np.random.default_rng(cfg.seeds.constants)
    probes = rng.uniform(low, high, size=(o.noise_probes, arch.n_params))
    m_stat, _ = estimate_noise_bound(ev, probes, o.confidence, method=o.noise_method)
    m_bar = m_stat + float(cfg.env.extra_noise_bound)
    ev = replace(ev, noise_bound=m_bar)

    consts = estimate_constants(arch, (low, high), env.state_sampler, s.constants_samples, cfg.seeds.constants,
                                env=env, horizon=o.horizon, discount=o.discount, safety_factor=s.safety_factor)
    G = cfg.attack.G if cfg.attack.G is not None else consts.G
    b_sep = cfg.check_separation(G)

    try:
        grid = build_grid(low, high, s.eta, cap=s.grid_cap, mode=s.grid_mode, n_points=s.grid_points,
                          seed=cfg.seeds.grid)
    except ValueError as exc:
        raise ConfigError(f"surrogate grid: {exc}") from exc
    samples = sample_gradients(ev, grid, s.c)
    write_samples_csv(paths.samples, samples)
    meta = {
        "m_bar": m_bar,
        "m_bar_statistical": m_stat,
        "confidence": o.confidence,
        "constants": asdict(consts),
        "G_used": G,
        "b_sep": b_sep,
        "psi": cfg.attack.psi,
        "c": s.c,
        "grid": {"mode": grid.mode, "eta": grid.eta, "budget_eta": grid.budget_eta, "M": len(grid.points),
                 "covering_radius": grid.covering_radius,
                 "spacing": None if grid.spacing is None else grid.spacing.tolist(),
                 "low": low.tolist(), "high": high.tolist()},
        "objective_evaluations": int(len(grid.points) * (arch.n_params + 1) *
                                     (1 if env.theta_objective is not None else ev.rollouts_per_eval)),
        "wall_time_s": time.perf_counter() - start,
    }
    if grid.mode == "sparse":
        meta["grid"]["note"] = "budget uses the sparse design's covering radius as eta"
    _write_json(paths.samples_meta, meta)
    return meta


def _grid_from_meta(g: dict, points: np.ndarray) -> ParameterGrid:
    spacing = None if g["spacing"] is None else np.array(g["spacing"])
    return ParameterGrid(np.array(g["low"]), np.array(g["high"]), float(g["eta"]), points, g["mode"],
                         float(g["covering_radius"]), spacing)


def stage_fit(cfg: RunConfig, root):
    paths = RunPaths(root)
    start = time.perf_counter()
    meta = _read_json(paths.samples_meta)
    samples = read_samples_csv(paths.samples, meta["c"])
    grid = _grid_from_meta(meta["grid"], samples.points)
    ev = replace(attacker_evaluator(cfg), noise_bound=float(meta["m_bar"]))
    s = cfg.surrogate
    dictionary = None if s.dictionary is None else [KernelSpec(**k) for k in s.dictionary]
    consts = None
    if s.theoretical_cap and ev.env.theta_objective is None:
        consts = SmoothnessConstants(**meta["constants"])
    sur, budget, _ = build_surrogate(ev, grid, meta["c"], dictionary=dictionary, feature_dim=s.feature_dim,
                                     ridge=s.ridge, feature_seed=cfg.seeds.features, safety_factor=s.safety_factor,
                                     consts=consts, samples=samples)
    fit_meta = {"wall_time_s": time.perf_counter() - start, "b_sep": meta["b_sep"], "psi": meta["psi"],
                "theoretical_cap": consts is not None}
    save_surrogate(paths.surrogate, sur, budget, fit_meta)
    return sur, budget


def stage_enumerate(cfg: RunConfig, root) -> CandidateSet:
    paths = RunPaths(root)
    start = time.perf_counter()
    sur, budget, meta = load_surrogate(paths.surrogate)
    low, high = cfg.box()
    cs = enumerate_candidates(sur, budget, low, high, float(meta["b_sep"]), solver_config(cfg))
    cs.stats["wall_time_s"] = time.perf_counter() - start
    save_candidates(paths.candidates, paths.candidates_summary, cs)
    problems = validate_candidates(cs, sur, budget.e)
    if problems:
        raise InvariantViolation("; ".join(problems[:5]))
    if cs.termination == "budget_exceeded":
        raise SolverBudgetExceeded(f"enumeration stopped by a work limit after {cs.r_cand} candidates")
    return cs


def run_offline(cfg: RunConfig, root, allow_budget_exceeded: bool = True) -> CandidateSet:
    """sample -> fit -> enumerate, against the attacker's plant copy only."""
    stage_sample(cfg, root)
    stage_fit(cfg, root)
    try:
        return stage_enumerate(cfg, root)
    except SolverBudgetExceeded:
        if not allow_budget_exceeded:
            raise
        paths = RunPaths(root)
        return load_candidates(paths.candidates, paths.candidates_summary)


# ---------------------------------------------------------------------------
# Online and evaluation


def stage_filter(cfg: RunConfig, root, trajectory_path=None, n: int | None = None):
    paths = RunPaths(root)
    start = time.perf_counter()
    cs = load_candidates(paths.candidates, paths.candidates_summary)
    arch = make_arch(cfg)
    obs = ObservationLog.from_csv(trajectory_path or paths.trajectory, n)
    fs = init_filter(cs, cfg.attack.psi)
    fs, q = run_filter(fs, cs, arch, obs)
    fs.check()
    save_filter(paths.shortlist, fs)
    errs, idx = report_errors(fs, cs, arch, obs)
    write_error_series(paths.errors, obs.ks, errs, idx)
    doc = _read_json(paths.shortlist)
    doc["wall_time_s"] = time.perf_counter() - start
    _write_json(paths.shortlist, doc)
    return fs, q


def stage_evaluate(cfg: RunConfig, root, victim_path=None) -> dict:
    """Max action error of every shortlisted candidate over uniform state samples."""
    paths = RunPaths(root)
    start = time.perf_counter()
    victim = load_policy(victim_path or paths.policy)
    cs = load_candidates(paths.candidates, paths.candidates_summary)
    short = _read_json(paths.shortlist)
    idx = np.array(short["shortlisted"], dtype=int)
    env = make_env(cfg)
    states = env.sample_states(np.random.default_rng(cfg.seeds.sweep), cfg.attack.sweep_states)
    target = evaluate_batch(victim.arch, victim.theta[None], states)[0]
    errs = action_errors(victim.arch, cs.candidates[idx], states, target) if idx.size else np.zeros((0, len(states)))
    with open(paths.sweep, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["candidate", "max_error", "mean_error", "trajectory_max_error", "distance_to_victim"])
        for row, i in enumerate(idx):
            wr.writerow([int(i), repr(float(errs[row].max())), repr(float(errs[row].mean())),
                         repr(float(short["max_error"][str(i)])),
                         repr(float(np.linalg.norm(cs.candidates[i] - victim.theta)))])
    best = int(idx[np.argmin(errs.max(axis=1))]) if idx.size else None
    out = {"best_candidate": best,
           "best_max_error": float(errs.max(axis=1).min()) if idx.size else None,
           "psi": cfg.attack.psi,
           "n_states": len(states),
           "wall_time_s": time.perf_counter() - start}
    return out


def _histogram(values, bins=20):
    if len(values) == 0:
        return {"counts": [], "edges": []}
    counts, edges = np.histogram(values, bins=bins)
    return {"counts": counts.tolist(), "edges": edges.tolist()}


def stage_report(cfg: RunConfig, root, victim_path=None) -> dict:
    """Collect persisted artifacts into one report; victim data is optional."""
    paths = RunPaths(root)
    meta = _read_json(paths.samples_meta)
    with open(paths.surrogate) as fh:
        sdoc = json.load(fh)
    summ = _read_json(paths.candidates_summary)
    cs = load_candidates(paths.candidates, paths.candidates_summary)
    budget = ErrorBudget.from_dict(sdoc["budget"])
    report = {
        "r_cand": summ["r_cand"],
        "termination": summ["termination"],
        "certified_coverage": summ["certified_coverage"],
        "b_sep": meta["b_sep"],
        "psi": cfg.attack.psi,
        "budget": {**budget.to_dict(), "terms": {k: v.tolist() for k, v in budget.terms().items()}},
        "wall_time_s": {"sample": meta["wall_time_s"], "fit": sdoc["meta"]["wall_time_s"],
                        "enumerate": summ["stats"].get("wall_time_s")},
        "solver_stats": summ["stats"],
        "provenance": {
            "config_hash": config_hash(cfg),
            "seeds": asdict(cfg.seeds),
            "versions": {"ctrlextract": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
        },
    }
    if paths.shortlist.exists():
        short = _read_json(paths.shortlist)
        report["q"] = short["q"]
        report["n_observations"] = short["n_observed"]
        report["shortlist"] = short["shortlisted"]
        report["wall_time_s"]["filter"] = short.get("wall_time_s")
    vpath = Path(victim_path) if victim_path else None
    if vpath is not None:
        victim = load_policy(vpath)
        d = np.linalg.norm(cs.candidates - victim.theta, axis=1) if cs.r_cand else np.zeros(0)
        report["distance_to_victim"] = {"min": float(d.min()) if d.size else None,
                                        "within_b_sep": int(np.sum(d <= meta["b_sep"])),
                                        "histogram": _histogram(d)}
        if paths.shortlist.exists():
            ev = stage_evaluate(cfg, root, vpath)
            report["sweep"] = ev
            report["wall_time_s"]["evaluate"] = ev["wall_time_s"]
    _write_json(paths.report, report)
    return report
