"""Command-line entry point.

Usage: poseset <command> --config FILE [--seed N] [--out DIR] [--quiet]

Commands: gen-data, train, compare-solvers, eval-sets, ablate, metrics.
Exit codes: 0 success, 2 config error, 3 runtime failure.
"""

import argparse
import json
import sys

from . import harness
from .errors import PosesetError
from .harness import ConfigError

COMMANDS = {
    "gen-data": harness.cmd_gen_data,
    "train": harness.cmd_train,
    "compare-solvers": harness.cmd_compare_solvers,
    "eval-sets": harness.cmd_eval_sets,
    "ablate": harness.cmd_ablate,
    "metrics": harness.cmd_metrics,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="poseset", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config document")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"poseset: cannot read config: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        if not isinstance(cfg, dict):
            print("poseset: config must be a JSON object", file=sys.stderr)
            return 2
        cfg["seed"] = args.seed
    try:
        result = COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"poseset: {exc}", file=sys.stderr)
        return 2
    except PosesetError as exc:
        print(f"poseset: {exc}", file=sys.stderr)
        return 3
    if not args.quiet:
        print(result if isinstance(result, str) else " ".join(map(str, result)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
