"""Command line entry point: ``isac run <config.json>``."""
from __future__ import annotations

import argparse
import logging
import sys

from .experiments import SCENARIOS, ExcessFailures, ParseError, parse_config, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FAILURES = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isac", description="RSMA ISAC waveform design experiments")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the scenario described by a JSON config")
    run.add_argument("config", help="path to the JSON config")
    run.add_argument("--scenario", choices=SCENARIOS, help="override the config's scenario")
    run.add_argument("--out", help="output directory (default: config output_dir)")
    run.add_argument("--jobs", type=int, default=1, help="parallel workers (default 1)")
    run.add_argument("--seed", type=int, help="override base_seed")
    run.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
    except ParseError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    update = {}
    if args.scenario:
        update["scenario"] = args.scenario
    if args.seed is not None:
        update["base_seed"] = args.seed
    if update:
        cfg = cfg.model_copy(update=update)
    if args.jobs < 1:
        print("config error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        paths = run_experiment(cfg, args.out, args.jobs)
    except ExcessFailures as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURES
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
