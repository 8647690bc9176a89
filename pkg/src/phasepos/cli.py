"""Command-line entry point.

Subcommands: scenario, simulate, train, bench, export. Exit codes: 0 on
success, 2 for configuration problems, 3 for missing/corrupt data, 4 for
numeric failures during training or estimation.
"""

from __future__ import annotations

import argparse
import sys

from .common import ConfigError, DataError, NumericError
from . import pipeline


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a run-config JSON file")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--output-dir", help="override the output directory")
    p.add_argument("--desk-scale", action="store_true", default=None,
                   help="use the reduced 50k-sample / 150-epoch preset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phasepos",
        description="Phase-based positioning testbed: simulate uplink carrier-phase "
                    "measurements, train the positioning networks, and benchmark "
                    "them against grid-search estimation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scenario", help="generate and store the antenna layout")
    _add_common(p)

    p = sub.add_parser("simulate", help="generate train/val/test sample files")
    _add_common(p)

    p = sub.add_parser("train", help="train one or all models")
    _add_common(p)
    p.add_argument("--model", choices=["mlp", "ae", "cnn", "all"], default="all")
    p.add_argument("--freq", type=float, help="restrict to one carrier frequency, Hz")
    p.add_argument("--power", type=float, help="restrict to one transmit power, dBm")

    p = sub.add_parser("bench", help="evaluate all methods on the test sets")
    _add_common(p)
    p.add_argument("--freq", type=float, help="restrict to one carrier frequency, Hz")
    p.add_argument("--power", type=float, help="restrict to one transmit power, dBm")
    p.add_argument("--skip-full-mle", action="store_true",
                   help="skip the full-accuracy lattice (complexity-matched runs only)")

    p = sub.add_parser("export", help="convert a binary sample file to CSV")
    _add_common(p)
    p.add_argument("--dataset", required=True, help="path to a .bin sample file")
    p.add_argument("--out", help="CSV output path (defaults next to the input)")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = pipeline.load_run_config(args.config, desk_scale=args.desk_scale,
                                       seed=args.seed, output_dir=args.output_dir)
        if args.command == "scenario":
            pipeline.cmd_scenario(cfg)
        elif args.command == "simulate":
            pipeline.cmd_scenario(cfg)
            pipeline.cmd_simulate(cfg)
        elif args.command == "train":
            pipeline.cmd_train(cfg, models=(args.model,), frequency=args.freq,
                               power=args.power)
        elif args.command == "bench":
            pipeline.cmd_bench(cfg, frequency=args.freq, power=args.power,
                               performance_match=not args.skip_full_mle)
        elif args.command == "export":
            pipeline.cmd_export(cfg, args.dataset, args.out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
