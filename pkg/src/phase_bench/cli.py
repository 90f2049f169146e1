"""``phase-bench`` command line entry point.

Exit codes: 0 success, 1 validation error (bad config, arguments or missing
upstream artifacts), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import load_config
from .errors import (
    CheckpointError,
    ConfigError,
    MissingArtifactError,
    PhaseBenchError,
)

COMMANDS = ("synth", "psd", "pairs", "train", "calibrate", "resolve", "reproduce")
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="phase-bench",
                description="Simulated phase-retrieval benchmark: data, training, resolution tests.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="experiment config file (section.key = value)")
    p.add_argument("--out", default="phase-bench-out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override experiment.seed")
    p.add_argument("--premodulate", action="store_true",
                   help="use the spectrally premodulated training set / model")
    p.add_argument("--post-filter", choices=("flatten",), default=None,
                   help="filter calibrated outputs before the resolution test")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(args) -> None:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    pre = bool(args.premodulate or cfg.spectral.premodulate)
    if args.post_filter and args.command != "resolve":
        raise ConfigError("only valid with the resolve command", field="--post-filter")
    if args.post_filter and args.premodulate:
        raise ConfigError("the post-filter control uses the baseline model",
                          field="--post-filter")
    ws = pipeline.Workspace(args.out)
    cmd = args.command
    if cmd == "synth":
        pipeline.cmd_synth(cfg, ws)
    elif cmd == "psd":
        pipeline.cmd_psd(cfg, ws)
    elif cmd == "pairs":
        pipeline.cmd_pairs(cfg, ws, pre)
    elif cmd == "train":
        pipeline.cmd_train(cfg, ws, pre)
    elif cmd == "calibrate":
        pipeline.cmd_calibrate(cfg, ws, pre)
    elif cmd == "resolve":
        pipeline.cmd_resolve(cfg, ws, pre and not args.post_filter, args.post_filter)
    elif cmd == "reproduce":
        pipeline.cmd_reproduce(cfg, ws)
        return
    pipeline.write_report(cfg, ws)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except (ConfigError, MissingArtifactError, CheckpointError) as exc:
        print(f"phase-bench: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (PhaseBenchError, ValueError, OSError, ArithmeticError) as exc:
        print(f"phase-bench: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
