"""Command line: ``swarmmec run | sweep | summarize``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from typing import List, Optional

from .config import ConfigError, SimConfig
from .experiments import (ResultRow, SweepSpec, load_config, load_sweep, rows_to_csv,
                          run_sweep, summarize, write_csv)
from .rldc import canonical_mode, run_training

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_VERDICT = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with 2, which means config error here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--out", metavar="DIR", default=".", help="output directory")
    p.add_argument("--loops", type=int, metavar="N", help="training episodes (LOOP)")
    p.add_argument("--slots", type=int, metavar="N", help="slots per episode (T)")
    p.add_argument("--seed", type=int, metavar="N")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="swarmmec", description="Leader-follower UAV swarm MEC simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="train and evaluate one configuration")
    _common(run)
    run.add_argument("--mode", default="rldc", choices=["rldc", "fixed", "noswarm"])

    sweep = sub.add_parser("sweep", help="run a sweep file")
    sweep.add_argument("spec", metavar="SWEEP", help="sweep file")
    _common(sweep)
    sweep.add_argument("--mode", choices=["rldc", "fixed", "noswarm"], action="append",
                       help="restrict to these modes (repeatable)")
    sweep.add_argument("--jobs", type=int, default=1, metavar="N")

    summ = sub.add_parser("summarize", help="summarize a result CSV")
    summ.add_argument("csv", metavar="CSV")
    return parser


def _config(args) -> SimConfig:
    cfg = load_config(args.config) if args.config else SimConfig()
    changes = {}
    if args.loops is not None:
        changes["LOOP"] = args.loops
    if args.slots is not None:
        changes["T_horizon"] = args.slots
    return cfg.replace(**changes).validate()


def _cmd_run(args) -> int:
    cfg = _config(args)
    mode = canonical_mode(args.mode)
    seed = cfg.rng_seed if args.seed is None else args.seed
    t0 = time.perf_counter()
    res = run_training(cfg, mode, seed)
    wall = time.perf_counter() - t0
    os.makedirs(args.out, exist_ok=True)
    row = ResultRow("none", "", mode, seed, res.mean_effi, res.sum_over_loop,
                    res.bits_served, res.joules_total, wall)
    write_csv([row], os.path.join(args.out, "metrics.csv"))
    with open(os.path.join(args.out, "episodes.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phase", "episode", "total_effi", "mean_effi", "served_bits",
                    "dropped_bits", "joules", "depot_visits", "forced_returns", "repairs",
                    "min_battery"])
        for phase, runs in (("train", res.train), ("eval", res.evaluation)):
            for i, m in enumerate(runs):
                w.writerow([phase, i, repr(m.total_effi), repr(m.mean_effi),
                            repr(sum(m.served_bits)), repr(sum(m.dropped_bits)),
                            repr(sum(m.energy)), m.depot_visits, m.forced_returns,
                            m.repairs, repr(m.min_battery)])
    print(f"mode={mode} seed={seed} mean_effi={res.mean_effi:.6g} "
          f"sum_over_loop={res.sum_over_loop:.6g} wall_s={wall:.1f}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    base = load_config(args.config) if args.config else SimConfig()
    spec, cfg = load_sweep(args.spec, base)
    changes = {}
    if args.loops is not None:
        changes["LOOP"] = args.loops
    if args.slots is not None:
        changes["T_horizon"] = args.slots
    cfg = cfg.replace(**changes).validate()
    modes = [canonical_mode(m) for m in args.mode] if args.mode else spec.modes
    seeds = [args.seed] if args.seed is not None else spec.seeds
    spec = SweepSpec(spec.param, spec.values, modes, seeds, spec.overrides).validate()
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "sweep.csv")
    rows = run_sweep(spec, cfg, jobs=max(1, args.jobs), out=path)
    failed = sum(r.error is not None for r in rows)
    print(f"wrote {len(rows)} rows to {path}" + (f" ({failed} failed)" if failed else ""))
    return EXIT_OK


def _cmd_summarize(args) -> int:
    try:
        s = summarize(args.csv)
    except (OSError, ValueError) as exc:
        print(f"swarmmec: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(s.text)
    return EXIT_OK if s.ok else EXIT_VERDICT


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep, "summarize": _cmd_summarize}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"swarmmec: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"swarmmec: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
