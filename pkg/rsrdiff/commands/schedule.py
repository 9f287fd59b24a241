"""`schedule`: print the shifting sequence and the inference sub-schedule."""

import argparse
import logging
import sys
from pathlib import Path

from rsrdiff.models import ScheduleConfig
from rsrdiff.services.scheduler import build_schedule, sub_schedule

logger = logging.getLogger(__name__)


def add_schedule_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--T", type=int, default=15, help="training steps")
    parser.add_argument("--gamma", type=float, default=2.0, help="noise scale")
    parser.add_argument("--p", type=float, default=0.3, help="growth exponent")
    parser.add_argument("--beta-1", type=float, default=None)
    parser.add_argument("--beta-T", type=float, default=0.9999)


def schedule_config(args: argparse.Namespace) -> ScheduleConfig:
    return ScheduleConfig(
        T=args.T, gamma=args.gamma, p=args.p, beta_1=args.beta_1, beta_T=args.beta_T
    )


def run(args: argparse.Namespace) -> int:
    schedule = build_schedule(schedule_config(args))
    frame = schedule.to_frame()
    sub = sub_schedule(schedule, args.K, args.selection)
    if args.dump:
        sys.stdout.write(frame.to_csv(index=False, float_format="%.9g"))
    frame["inference"] = frame["t"].isin(sub.taus)
    if args.out:
        frame.to_csv(args.out, index=False, float_format="%.9g")
        logger.info(f"Wrote schedule to {args.out}")
    elif not args.dump:
        print(frame.to_string(index=False, float_format=lambda v: f"{v:.9g}"))
    logger.info(f"sub-schedule ({args.selection}, K={sub.K}): {list(sub.taus)}")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("schedule", help="show the noise schedule")
    add_schedule_options(parser)
    parser.add_argument("--K", type=int, default=4, help="inference steps")
    parser.add_argument(
        "--selection", choices=["uniform", "geometric"], default="uniform"
    )
    parser.add_argument("--out", type=Path, default=None, help="CSV destination")
    parser.add_argument(
        "--dump", action="store_true", help="write t,beta,alpha,sqrt_beta CSV to stdout"
    )
    parser.set_defaults(handler=run)
