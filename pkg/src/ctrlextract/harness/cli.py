"""Command line: one subcommand per pipeline stage.

Exit codes: 0 success, 2 config error, 3 solver budget exceeded,
4 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, default_config, dump_config, load_config
from .pipeline import (
    InvariantViolation,
    SolverBudgetExceeded,
    stage_enumerate,
    stage_evaluate,
    stage_filter,
    stage_fit,
    stage_report,
    stage_sample,
    stage_simulate,
    stage_train,
)

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_INVARIANT = 0, 2, 3, 4


def _print(doc):
    print(json.dumps(doc, indent=2))


def _cmd_config_init(args):
    text = dump_config(default_config(args.preset), args.output)
    if args.output is None:
        sys.stdout.write(text)


def _cmd_train(args, cfg):
    pol = stage_train(cfg, args.run_dir)
    _print({"theta": pol.theta.tolist()})


def _cmd_simulate(args, cfg):
    traj = stage_simulate(cfg, args.run_dir, args.policy, args.seed, args.n)
    _print({"observations": len(traj)})


def _cmd_sample(args, cfg):
    meta = stage_sample(cfg, args.run_dir)
    _print({k: meta[k] for k in ("m_bar", "b_sep", "G_used")} | {"M": meta["grid"]["M"]})


def _cmd_fit(args, cfg):
    _, budget = stage_fit(cfg, args.run_dir)
    _print({"e": budget.e.tolist()})


def _cmd_enumerate(args, cfg):
    cs = stage_enumerate(cfg, args.run_dir)
    _print(cs.summary())


def _cmd_filter(args, cfg):
    _, q = stage_filter(cfg, args.run_dir, args.trajectory, args.n)
    _print({"q": q})


def _cmd_evaluate(args, cfg):
    _print(stage_evaluate(cfg, args.run_dir, args.victim))


def _cmd_report(args, cfg):
    rep = stage_report(cfg, args.run_dir, args.victim)
    _print({k: rep.get(k) for k in ("r_cand", "q", "termination", "certified_coverage")})


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctrlextract", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("config-init", help="print or write the default config for a preset")
    p.add_argument("--preset", default="pendulum", choices=["pendulum", "mountain_car", "synthetic"])
    p.add_argument("-o", "--output")
    p.set_defaults(fn=_cmd_config_init, needs_config=False)

    def staged(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config")
        p.add_argument("run_dir")
        p.set_defaults(fn=fn, needs_config=True)
        return p

    staged("train", _cmd_train, "train the victim policy (experiment generation)")
    p = staged("simulate", _cmd_simulate, "record a victim trajectory CSV")
    p.add_argument("--policy")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int)
    staged("sample", _cmd_sample, "noise bound, smoothness constants and finite-difference grid samples")
    staged("fit", _cmd_fit, "fit the multi-kernel surrogate and the error budget")
    staged("enumerate", _cmd_enumerate, "enumerate b-separated candidates")
    p = staged("filter", _cmd_filter, "shortlist candidates against an observed trajectory")
    p.add_argument("--trajectory")
    p.add_argument("--n", type=int)
    p = staged("evaluate", _cmd_evaluate, "error sweep of the shortlist over sampled states")
    p.add_argument("--victim")
    p = staged("report", _cmd_report, "collect artifacts into report.json")
    p.add_argument("--victim")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if not args.needs_config:
            args.fn(args)
            return EXIT_OK
        cfg = load_config(args.config)
        args.fn(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverBudgetExceeded as exc:
        print(f"solver budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
