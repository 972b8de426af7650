"""Command-line entry point: ``vanetsim --preset desk --out results/``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import __version__
from .experiments import run_scenario
from .scenario import PRESETS, Scenario, ScenarioError, dumps, load_scenario, preset


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vanetsim", description=__doc__)
    src = ap.add_mutually_exclusive_group()
    src.add_argument("--scenario", metavar="PATH", help="scenario file")
    src.add_argument("--preset", choices=sorted(PRESETS), help="built-in scenario")
    ap.add_argument("--seed", type=int, help="run this seed only (overrides the scenario's list)")
    ap.add_argument("--out", default="out", help="output directory (default: out)")
    ap.add_argument("--event-log", action="store_true", help="write one event log per run")
    ap.add_argument("--no-collisions", action="store_true", help="disable packet collisions")
    ap.add_argument("--print-defaults", action="store_true",
                    help="print the selected scenario (default: desk) as a scenario file and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def resolve(args) -> Scenario:
    if args.scenario:
        scn = load_scenario(args.scenario)
    else:
        scn = preset(args.preset or "desk")
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ScenarioError("--seed must be an unsigned 64-bit integer", "seed")
        scn.run = replace(scn.run, seeds=(args.seed,))
    if args.no_collisions:
        scn.radio = replace(scn.radio, collisions=False)
    return scn


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        scn = resolve(args)
    except (OSError, ScenarioError) as exc:
        print(f"vanetsim: {exc}", file=sys.stderr)
        return 2
    if args.print_defaults:
        sys.stdout.write(dumps(scn))
        return 0
    try:
        run_scenario(scn, args.out, event_log=args.event_log)
    except Exception as exc:  # report, do not traceback, on a failed run
        logging.getLogger("vanetsim").exception("run failed")
        print(f"vanetsim: run failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
