"""`eval` and `stats`: per-image metrics and the rank-based comparison."""

import argparse
import logging
from pathlib import Path

import pandas as pd

from rsrdiff.commands.training import TENSOR_SUFFIX, tensor_files
from rsrdiff.errors import RsrDiffError
from rsrdiff.services.metrics import METRICS, build_report, evaluate_images
from rsrdiff_utils.tensor_io import read_tensor

logger = logging.getLogger(__name__)


def _load_dir(path: Path) -> dict[str, object]:
    return {
        f.name.removesuffix(TENSOR_SUFFIX): read_tensor(f) for f in tensor_files(path)
    }


def parse_method_dir(value: str) -> tuple[str, Path]:
    """'METHOD=DIR', or a bare DIR named after its last component."""
    method, sep, path = value.partition("=")
    if not sep:
        return Path(value).name, Path(value)
    return method, Path(path)


def run_eval(args: argparse.Namespace) -> int:
    gts = _load_dir(args.gt_dir)
    records = []
    for method, pred_dir in args.pred_dir:
        preds = _load_dir(pred_dir)
        records.extend(
            evaluate_images(preds, gts, method, data_range=args.data_range)
        )
    report = build_report(records)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    report.to_frame().to_csv(args.out, index=False, float_format="%.9g")
    print(report.aggregates.to_string(float_format=lambda v: f"{v:.4f}"))
    logger.info(f"Wrote {len(records)} records to {args.out}")
    return 0


def run_stats(args: argparse.Namespace) -> int:
    frame = pd.read_csv(args.csv)
    if "section" in frame.columns:
        frame = frame[frame["section"] == "image"]
    if args.groupby not in frame.columns:
        raise RsrDiffError(f"Column '{args.groupby}' not found in {args.csv}")
    missing = [m for m in METRICS if m not in frame.columns]
    if missing:
        raise RsrDiffError(f"Report {args.csv} lacks metric columns {missing}")
    frame = frame.rename(columns={args.groupby: "method"}).reset_index(drop=True)

    report = build_report(frame)
    print(report.aggregates.to_string(float_format=lambda v: f"{v:.4f}"))
    for block in report.statistics:
        print(f"\n{block.metric}: H = {block.statistic:.4f}, p = {block.p_value:.4g}")
        if block.pairwise is not None:
            print("Dunn-Bonferroni adjusted p-values:")
            print(block.pairwise.to_string(float_format=lambda v: f"{v:.4g}"))
    if args.out:
        report.to_frame().to_csv(args.out, index=False, float_format="%.9g")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    evaluate = subparsers.add_parser("eval", help="score predictions against HR")
    evaluate.add_argument(
        "--pred-dir",
        type=parse_method_dir,
        action="append",
        required=True,
        help="METHOD=DIR; repeat to compare methods",
    )
    evaluate.add_argument("--gt-dir", type=Path, required=True)
    evaluate.add_argument("--data-range", type=float, default=1.0)
    evaluate.add_argument("--out", type=Path, required=True)
    evaluate.set_defaults(handler=run_eval)

    stats = subparsers.add_parser("stats", help="Kruskal-Wallis and Dunn tests")
    stats.add_argument("--csv", type=Path, required=True)
    stats.add_argument("--groupby", default="method")
    stats.add_argument("--out", type=Path, default=None)
    stats.set_defaults(handler=run_stats)
