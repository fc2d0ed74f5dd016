"""Shared driver for the experiment scripts: train, offline attack, seeded online trials, report."""

import argparse
import json
import time
import warnings

import numpy as np

from ctrlextract.envsim import simulate
from ctrlextract.harness.config import default_config, load_config
from ctrlextract.harness.pipeline import (
    RunPaths,
    make_arch,
    make_env,
    run_offline,
    stage_evaluate,
    stage_filter,
    stage_report,
    stage_simulate,
    stage_train,
)
from ctrlextract.online import ObservationLog, init_filter, run_filter


def parse_args(preset: str, description: str):
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("run_dir", help="output run directory")
    ap.add_argument("--config", help=f"YAML config (default: {preset} preset)")
    ap.add_argument("--trials", type=int, default=25, help="seeded online trajectories")
    ap.add_argument("--quiet-warnings", action="store_true", help="silence non-convergence and budget warnings")
    return ap.parse_args()


def run(preset: str, description: str):
    args = parse_args(preset, description)
    cfg = load_config(args.config) if args.config else default_config(preset)
    with warnings.catch_warnings():
        if args.quiet_warnings:
            warnings.simplefilter("ignore", RuntimeWarning)
        t0 = time.perf_counter()
        victim = stage_train(cfg, args.run_dir)
        cs = run_offline(cfg, args.run_dir)
        t_offline = time.perf_counter() - t0

    # one recorded trajectory drives the persisted shortlist; the rest are trial statistics
    stage_simulate(cfg, args.run_dir)
    stage_filter(cfg, args.run_dir)
    sweep = stage_evaluate(cfg, args.run_dir)
    report = stage_report(cfg, args.run_dir, RunPaths(args.run_dir).policy)

    arch, env = make_arch(cfg), make_env(cfg)
    qs = []
    for seed in range(args.trials):
        traj = simulate(env, victim, cfg.attack.n_observations - 1, (cfg.seeds.trajectory, seed))
        _, q = run_filter(init_filter(cs, cfg.attack.psi), cs, arch, ObservationLog.from_trajectory(traj))
        qs.append(q)
    qs = np.array(qs)
    summary = {
        "victim_theta": victim.theta.tolist(),
        "r_cand": cs.r_cand,
        "termination": cs.termination,
        "certified_coverage": cs.certified,
        "b_sep": cs.b_sep,
        "e": report["budget"]["e"],
        "min_distance_to_victim": report.get("distance_to_victim", {}).get("min"),
        "q_recorded_trajectory": report.get("q"),
        "sweep_best_max_error": sweep["best_max_error"],
        "psi": cfg.attack.psi,
        "trials": args.trials,
        "q_median": float(np.median(qs)),
        "elimination_ge_90pct": int(np.sum(1 - qs / max(cs.r_cand, 1) >= 0.9)),
        "offline_wall_s": t_offline,
    }
    print(json.dumps(summary, indent=2))
    return summary
