"""`experiment`: the end-to-end desk-scale run driven by a config file."""

import argparse
from pathlib import Path

from rsrdiff.models import ExperimentConfig
from rsrdiff.services.experiment import run_experiment
from rsrdiff_utils.config_file import parse_config_text


def run(args: argparse.Namespace) -> int:
    values = parse_config_text(args.config.read_text()) if args.config else {}
    if args.skip_train:
        values["skip_train"] = True
    if args.no_timing:
        values["timing"] = False
    if args.seed is not None:
        values["seed"] = args.seed
    if args.out_dir is not None:
        values["out_dir"] = args.out_dir
    result = run_experiment(ExperimentConfig.model_validate(values))
    print(result.table1.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    if result.table2 is not None:
        print()
        print(result.table2.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser(
        "experiment", help="train, sample, evaluate, ablate"
    )
    parser.add_argument("--config", type=Path, default=None, help="key = value file")
    parser.add_argument("--skip-train", action="store_true")
    parser.add_argument(
        "--no-timing", action="store_true", help="record 0 seconds per slice"
    )
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out-dir", type=Path, default=None)
    parser.set_defaults(handler=run)
