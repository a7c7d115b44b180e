"""Command-line entry point: ``m2d <subcommand> [--config PATH] [--seed N] [--out DIR] [-v]``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import experiment
from .config import load_config
from .errors import M2DError

EXIT_OK = 0
EXIT_USAGE = 1

SUBCOMMANDS = {
    "synth": "generate synthetic sessions",
    "label": "label kinematics on the EEG timeline",
    "build": "build windowed train/val/test datasets per horizon",
    "train": "train one model per horizon",
    "eval": "evaluate checkpoints on the test sets",
    "sweep": "run every stage in order",
    "report": "summarise the horizon table",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="m2d", description="EEG driver-intention pipeline on synthetic sessions.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="config file (section.key = value lines); defaults if omitted")
        p.add_argument("--seed", type=int, help="override synth.seed, split.seed and train.seed")
        p.add_argument("--out", help="override experiment.output_dir")
        p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    overrides = {}
    if args.seed is not None:
        overrides.update(synth__seed=args.seed, split__seed=args.seed, train__seed=args.seed)
    if args.out is not None:
        overrides["experiment__output_dir"] = args.out
    try:
        cfg = load_config(args.config, **overrides)
        if args.command == "sweep":
            experiment.run_experiment(cfg)
            print((cfg.output_dir / experiment.SUMMARY_FILE).read_text(encoding="utf-8"), end="")
        elif args.command == "report":
            print(experiment.run_report(cfg), end="")
        else:
            path = experiment.STAGE_FUNCS[args.command](cfg)
            print(path)
    except M2DError as exc:
        print(f"m2d {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        return 130
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
