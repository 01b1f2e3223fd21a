"""Command line: run scenarios, export the safety grid, replay the fork attack."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

from . import analysis
from .config import bundled, resolve
from .graph import CliqueCapExceeded
from .model import ConfigError

log = logging.getLogger("cliquechain")

OUT_ENV = "CLIQUECHAIN_OUT"


def out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or "out")


def _fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc


# -- simulate -----------------------------------------------------------------


def _simulate_one(job: tuple) -> dict:
    cfg, dest, plots = job
    from .netsim import run_scenario

    report = run_scenario(cfg)
    dest.mkdir(parents=True, exist_ok=True)
    (dest / "report.json").write_text(report.to_json())
    (dest / "series.csv").write_text(report.series_csv())
    (dest / "ledger.json").write_text(report.ledger_json())
    if plots:
        from .plotting import scenario_series

        scenario_series(report.series, dest / "series.png", title=f"{cfg.name}, seed {cfg.seed}")
    s = report.data["safety"]
    return {"scenario": cfg.name, "seed": cfg.seed, "dir": str(dest), "liveness": report.liveness,
            "converged": s["converged"], "conflicts": s["conflicting_final_slots"], "digest": report.digest()}


def cmd_simulate(args) -> int:
    cfg = resolve(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.periods is not None:
        overrides["periods"] = args.periods
    if overrides:
        cfg = cfg.with_(**overrides)
    base = out_dir(args.out)
    seeds = [cfg.seed + i for i in range(args.sweep)] if args.sweep > 1 else [cfg.seed]
    jobs = []
    for seed in seeds:
        c = cfg if seed == cfg.seed else cfg.with_(seed=seed)
        dest = base / cfg.name if len(seeds) == 1 else base / f"{cfg.name}-seed{seed}"
        jobs.append((c, dest, not args.no_plots))
    if args.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(_simulate_one, jobs))
    else:
        results = [_simulate_one(j) for j in jobs]
    for r in results:
        print(f"{r['scenario']} seed={r['seed']} liveness={r['liveness']:.6f} converged={r['converged']} "
              f"conflicts={r['conflicts']} digest={r['digest'][:16]} -> {r['dir']}")
    return 0 if all(r["conflicts"] == 0 for r in results) else 1


# -- safety grid ----------------------------------------------------------------


def grid_Q_values(steps: int) -> list[Fraction]:
    qs = set(analysis.default_Q_steps(steps))
    qs.add(Fraction(2, 3))  # the usual super-majority, so E=96 carries the 64/96 cell
    return sorted(qs)


def cmd_safety_grid(args) -> int:
    if args.e_min < 1 or args.e_max < args.e_min or args.e_step < 1:
        raise ConfigError("need 1 <= e-min <= e-max and e-step >= 1")
    if not 0 <= args.beta <= 1:
        raise ConfigError("beta must lie in [0, 1]")
    Es = list(range(args.e_min, args.e_max + 1, args.e_step))
    if args.e_min <= 96 <= args.e_max and 96 not in Es:
        Es = sorted(Es + [96])
    cells = analysis.safety_grid(Es, grid_Q_values(args.q_steps), args.beta, args.rate)
    dest = out_dir(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    (dest / "safety_grid.csv").write_text(analysis.grid_csv(cells))
    # both readings of the headline: P(>= 64 of 96) and the strict P(> 64 of 96)
    p64 = analysis.binom_tail(96, 64, args.beta)
    p65 = analysis.binom_tail(96, 65, args.beta)
    summary = {
        "beta": str(args.beta),
        "slots_per_second": str(args.rate),
        "cells": len(cells),
        "headline": {
            "E": 96, "threshold": 64,
            "p_at_least_threshold": float(p64),
            "p_more_than_threshold": float(p65),
            "years_between_events": analysis.years_between(p64, args.rate),
        },
    }
    (dest / "safety_grid.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if not args.no_plots:
        from .plotting import safety_heatmap

        safety_heatmap(cells, dest / "safety_grid.png")
    print(f"{len(cells)} cells -> {dest / 'safety_grid.csv'}; "
          f"P(Bin(96, {args.beta}) >= 64) = {float(p64):.4e}")
    return 0


# -- fork attack replay -------------------------------------------------------


def cmd_replay_fork_attack(args) -> int:
    from .replay import replay_fork_attack

    res = replay_fork_attack(delta_f=args.delta_f, beta=args.beta)
    dest = out_dir(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    (dest / "fork_attack_trace.txt").write_text(res.trace_text())
    (dest / "fork_attack.json").write_text(res.to_json())
    sys.stdout.write(res.trace_text())
    failed = [k for k, ok in res.checks.items() if not ok]
    print(f"outcome: {'ok' if not failed else 'FAILED ' + ', '.join(failed)}; trace sha256 {res.digest()}")
    return 0 if not failed else 1


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cliquechain", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one scenario (or a seed sweep)")
    s.add_argument("--config", required=True, help=f"TOML path or bundled name: {', '.join(bundled())}")
    s.add_argument("--seed", type=int)
    s.add_argument("--periods", type=int)
    s.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    s.add_argument("--sweep", type=int, default=1, help="run this many consecutive seeds")
    s.add_argument("--parallel", type=int, default=1, help="worker processes for a sweep")
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_simulate)

    g = sub.add_parser("safety-grid", help="probability that an attacker reaches the super-majority")
    g.add_argument("--e-min", type=int, default=32)
    g.add_argument("--e-max", type=int, default=160)
    g.add_argument("--e-step", type=int, default=8)
    g.add_argument("--q-steps", type=int, default=21)
    g.add_argument("--beta", type=_fraction, default=Fraction(1, 3))
    g.add_argument("--rate", type=_fraction, default=Fraction(2), help="slots per second")
    g.add_argument("--out")
    g.add_argument("--no-plots", action="store_true")
    g.set_defaults(func=cmd_safety_grid)

    r = sub.add_parser("replay-fork-attack", help="scripted three-frame fork attack")
    r.add_argument("--delta-f", type=int, default=4)
    r.add_argument("--beta", type=_fraction, default=Fraction(1, 3))
    r.add_argument("--out")
    r.set_defaults(func=cmd_replay_fork_attack)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CliqueCapExceeded as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
