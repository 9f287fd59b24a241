"""`phantom`, `degrade` and `diffuse`: synthetic slices and their degradations."""

import argparse
import logging
from pathlib import Path

import numpy as np

from rsrdiff.models import PHANTOM_KINDS, PhantomSpec, ScheduleConfig
from rsrdiff.services.degradation import gen_phantom, make_pair
from rsrdiff.services.diffusion import forward_marginal, residual
from rsrdiff.services.scheduler import build_schedule
from rsrdiff_utils.pgm import write_pgm
from rsrdiff_utils.tensor_io import read_tensor, write_tensor

logger = logging.getLogger(__name__)


def parse_factor(value: str) -> int | tuple[int, int]:
    """'4' or '4x2' (height x width)."""
    parts = value.lower().split("x")
    if len(parts) == 1:
        return int(parts[0])
    if len(parts) == 2:
        return int(parts[0]), int(parts[1])
    raise argparse.ArgumentTypeError(f"Invalid factor '{value}'")


def parse_size(value: str) -> tuple[int, int]:
    factor = parse_factor(value)
    return (factor, factor) if isinstance(factor, int) else factor


def run_phantom(args: argparse.Namespace) -> int:
    spec = PhantomSpec(
        size=args.size, kind=args.kind, seed=args.seed, factor=args.factor
    )
    image = gen_phantom(spec)
    write_tensor(args.out, image)
    if args.pgm:
        write_pgm(args.pgm, image, 0.0, 1.0)
    logger.info(f"Wrote {spec.kind} phantom {image.shape} to {args.out}")
    return 0


def run_degrade(args: argparse.Namespace) -> int:
    pair = make_pair(read_tensor(args.input), args.factor)
    write_tensor(args.out_lr, pair.lr)
    if args.pgm:
        write_pgm(args.pgm, pair.lr, 0.0, 1.0)
    logger.info(f"Wrote LR image to {args.out_lr}")
    return 0


def run_diffuse(args: argparse.Namespace) -> int:
    """x_t at several timesteps for each (p, gamma) pair, with one shared noise."""
    hr = read_tensor(args.hr)
    lr = read_tensor(args.lr) if args.lr else make_pair(hr, args.factor).lr
    e0 = residual(hr, lr)
    noise = np.random.default_rng(args.seed).standard_normal(hr.shape)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for p in args.p_values:
        for gamma in args.gamma_values:
            schedule = build_schedule(ScheduleConfig(T=args.T, gamma=gamma, p=p))
            for t in args.timesteps:
                x_t = forward_marginal(hr, e0, t, schedule, noise)
                stem = f"p{p:g}_gamma{gamma:g}_t{t}"
                write_tensor(args.out_dir / f"{stem}.rsd", x_t)
                write_pgm(args.out_dir / f"{stem}.pgm", x_t, 0.0, 1.0)
    logger.info(f"Wrote forward-process previews to {args.out_dir}")
    return 0


def _floats(value: str) -> list[float]:
    return [float(v) for v in value.split(",") if v.strip()]


def _ints(value: str) -> list[int]:
    return [int(v) for v in value.split(",") if v.strip()]


def register(subparsers: argparse._SubParsersAction) -> None:
    phantom = subparsers.add_parser("phantom", help="generate a synthetic slice")
    phantom.add_argument("--kind", choices=PHANTOM_KINDS, default="smooth-field")
    phantom.add_argument("--size", type=parse_size, default=(32, 32))
    phantom.add_argument("--seed", type=int, default=0)
    phantom.add_argument("--factor", type=int, default=4, help="lesion scale")
    phantom.add_argument("--out", type=Path, required=True)
    phantom.add_argument("--pgm", type=Path, default=None)
    phantom.set_defaults(handler=run_phantom)

    degrade = subparsers.add_parser("degrade", help="block-average then upsample")
    degrade.add_argument("--in", dest="input", type=Path, required=True)
    degrade.add_argument("--factor", type=parse_factor, default=4)
    degrade.add_argument("--out-lr", type=Path, required=True)
    degrade.add_argument("--pgm", type=Path, default=None)
    degrade.set_defaults(handler=run_degrade)

    diffuse = subparsers.add_parser("diffuse", help="preview the forward process")
    diffuse.add_argument("--T", type=int, default=15, help="training steps")
    diffuse.add_argument("--hr", type=Path, required=True)
    diffuse.add_argument("--lr", type=Path, default=None)
    diffuse.add_argument("--factor", type=parse_factor, default=4)
    diffuse.add_argument("--timesteps", type=_ints, default=[1, 5, 10, 15])
    diffuse.add_argument("--p-values", type=_floats, default=[0.3])
    diffuse.add_argument("--gamma-values", type=_floats, default=[2.0])
    diffuse.add_argument("--seed", type=int, default=0)
    diffuse.add_argument("--out-dir", type=Path, required=True)
    diffuse.set_defaults(handler=run_diffuse)
