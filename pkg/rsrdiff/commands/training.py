"""`train` and `sample`: fit a denoiser variant and run few-step inference."""

import argparse
import logging
from pathlib import Path

from rsrdiff.errors import RsrDiffError
from rsrdiff.models import PHANTOM_KINDS, VARIANTS, NetConfig, TrainConfig
from rsrdiff.services.degradation import make_pair, phantom_corpus
from rsrdiff.services.denoiser import NetDenoiser
from rsrdiff.services.sampler import SamplerConfig, sample_slices
from rsrdiff.services.scheduler import build_schedule, sub_schedule
from rsrdiff.services.trainer import train
from rsrdiff_utils.checkpoint import load_model, load_schedule, save_checkpoint
from rsrdiff_utils.config_file import parse_config_text
from rsrdiff_utils.tensor_io import read_tensor, write_tensor

logger = logging.getLogger(__name__)

TENSOR_SUFFIX = ".rsd"


def tensor_files(path: Path) -> list[Path]:
    """A single tensor file, or every tensor file in a directory (sorted)."""
    if path.is_dir():
        files = sorted(path.glob(f"*{TENSOR_SUFFIX}"))
        if not files:
            raise RsrDiffError(f"No {TENSOR_SUFFIX} files in {path}")
        return files
    if not path.exists():
        raise FileNotFoundError(path)
    return [path]


def train_config(args: argparse.Namespace) -> TrainConfig:
    values: dict = {}
    if args.config:
        values.update(parse_config_text(args.config.read_text()))
    if args.steps is not None:
        values["total_steps"] = args.steps
    if args.warmup is not None:
        values["warmup_steps"] = args.warmup
    if args.seed is not None:
        values["seed"] = args.seed
    return TrainConfig.model_validate(values)


def run_train(args: argparse.Namespace) -> int:
    config = train_config(args)
    net = NetConfig(
        base_channels=args.base_channels,
        depth=args.depth,
        use_window_attention=VARIANTS[args.variant],
        window_size=args.window_size,
        heads=args.heads,
        time_embed_dim=args.time_embed_dim,
    )
    if args.hr:
        files = tensor_files(args.hr)
        pairs = [make_pair(read_tensor(f), args.factor) for f in files]
    else:
        corpus = phantom_corpus(
            args.phantoms, args.size, args.factor, PHANTOM_KINDS, config.seed
        )
        pairs = [pair for _, pair in corpus]
    logger.info(f"Training {net.variant} on {len(pairs)} pairs")
    log_path = args.log or args.out.with_suffix(".csv")
    result = train(pairs, config, net, log_path=log_path)
    save_checkpoint(args.out, result.model, config.schedule_config())
    return 0


def run_sample(args: argparse.Namespace) -> int:
    model = load_model(args.checkpoint, args.variant)
    schedule = build_schedule(load_schedule(args.checkpoint))
    sub = sub_schedule(schedule, args.steps, args.selection)
    config = SamplerConfig(sub=sub, gamma=schedule.gamma, seed=args.seed)

    files = tensor_files(args.input)
    slices = [read_tensor(f) for f in files]
    outputs = sample_slices(slices, NetDenoiser(model), config)
    if args.input.is_dir():
        args.out.mkdir(parents=True, exist_ok=True)
        targets = [args.out / f.name for f in files]
    else:
        targets = [args.out]
    for target, image in zip(targets, outputs, strict=True):
        write_tensor(target, image)
    logger.info(f"Sampled {len(outputs)} slice(s) with taus {list(sub.taus)}")
    return 0


def add_net_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--base-channels", type=int, default=32)
    parser.add_argument("--depth", type=int, default=2)
    parser.add_argument("--window-size", type=int, default=8)
    parser.add_argument("--heads", type=int, default=4)
    parser.add_argument("--time-embed-dim", type=int, default=64)


def register(subparsers: argparse._SubParsersAction) -> None:
    trainer = subparsers.add_parser("train", help="train a denoiser variant")
    trainer.add_argument("--config", type=Path, default=None, help="key = value file")
    trainer.add_argument("--variant", choices=list(VARIANTS), default="swin")
    trainer.add_argument(
        "--data", "--hr", dest="hr", type=Path, default=None, help="HR tensor file/dir"
    )
    trainer.add_argument("--phantoms", type=int, default=200)
    trainer.add_argument("--size", type=int, default=32)
    trainer.add_argument("--factor", type=int, default=4)
    trainer.add_argument("--steps", type=int, default=None)
    trainer.add_argument("--warmup", type=int, default=None)
    trainer.add_argument("--seed", type=int, default=None)
    trainer.add_argument(
        "--ckpt-out", "--out", dest="out", type=Path, required=True, help="checkpoint"
    )
    trainer.add_argument("--log", type=Path, default=None, help="training CSV log")
    add_net_options(trainer)
    trainer.set_defaults(handler=run_train)

    sampler = subparsers.add_parser("sample", help="few-step super-resolution")
    sampler.add_argument(
        "--ckpt", "--checkpoint", dest="checkpoint", type=Path, required=True
    )
    sampler.add_argument("--variant", choices=list(VARIANTS), default=None)
    sampler.add_argument(
        "--lr", "--in", dest="input", type=Path, required=True, help="LR file/dir"
    )
    sampler.add_argument("--out", type=Path, required=True)
    sampler.add_argument("--steps", type=int, default=4, help="K")
    sampler.add_argument(
        "--selection", choices=["uniform", "geometric"], default="uniform"
    )
    sampler.add_argument("--seed", type=int, default=0)
    sampler.set_defaults(handler=run_sample)
