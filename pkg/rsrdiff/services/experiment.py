"""Desk-scale experiment: phantoms -> train both variants -> few-step sampling
-> metrics and rank statistics -> method table and ablation table."""

from __future__ import annotations

import logging
import time
from collections.abc import Iterator
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from rsrdiff.errors import StageError
from rsrdiff.models import ExperimentConfig
from rsrdiff.services.degradation import phantom_corpus
from rsrdiff.services.denoiser import DenoiserNet, NetDenoiser
from rsrdiff.services.diffusion import ImagePair
from rsrdiff.services.metrics import (
    HIGHER_IS_BETTER,
    METRICS,
    MetricReport,
    build_report,
    evaluate_images,
)
from rsrdiff.services.sampler import SamplerConfig, run_sampler, slice_seed
from rsrdiff.services.scheduler import build_schedule, sub_schedule
from rsrdiff.services.statistics import ALPHA, bootstrap_ci, wilcoxon_paired
from rsrdiff.services.trainer import train
from rsrdiff_utils.checkpoint import load_model, save_checkpoint
from rsrdiff_utils.pgm import write_pgm

logger = logging.getLogger(__name__)

BASELINE = "nearest"
CSV_FLOAT_FORMAT = "%.9g"


@dataclass
class ExperimentResult:
    out_dir: Path
    report: MetricReport
    table1: pd.DataFrame
    table2: pd.DataFrame | None


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Log a stage and re-raise its failure as StageError naming it."""
    logger.info(f"Stage '{name}' started")
    start = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        logger.exception(f"Stage '{name}' failed")
        raise StageError(name, e) from e
    logger.info(f"Stage '{name}' finished in {time.perf_counter() - start:.1f}s")


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def checkpoint_path(config: ExperimentConfig, variant: str) -> Path:
    return config.out_dir / f"denoiser_{variant}.ckpt"


def obtain_model(
    config: ExperimentConfig, variant: str, pairs: list[ImagePair]
) -> DenoiserNet:
    """Train ``variant``, or reload it when skip_train finds a checkpoint."""
    path = checkpoint_path(config, variant)
    if config.skip_train and path.exists():
        logger.info(f"Reusing {variant} checkpoint {path}")
        return load_model(path, variant)
    result = train(
        pairs,
        config.train_config(variant),
        config.net_config(variant),
        log_path=config.out_dir / f"train_{variant}.csv",
    )
    save_checkpoint(path, result.model, config.schedule_config())
    return result.model


def sample_test_set(
    config: ExperimentConfig, model: DenoiserNet, test: list[tuple[str, ImagePair]]
) -> tuple[dict[str, np.ndarray], dict[str, float]]:
    """K-step predictions and seconds per slice, one seeded stream per slice.

    With ``config.timing`` off every slice is recorded as 0 seconds.
    """
    schedule = build_schedule(config.schedule_config())
    sub = sub_schedule(schedule, config.sample_steps, config.selection)
    denoiser = NetDenoiser(model)
    preds, seconds = {}, {}
    for index, (image_id, pair) in enumerate(test):
        sampler_config = SamplerConfig(
            sub=sub, gamma=config.gamma, seed=slice_seed(config.seed, index)
        )
        start = time.perf_counter()
        preds[image_id] = run_sampler(pair.lr, denoiser, sampler_config)
        seconds[image_id] = time.perf_counter() - start if config.timing else 0.0
    return preds, seconds


def method_table(report: MetricReport, seed: int = 0) -> pd.DataFrame:
    """Per-method mean, std, bootstrap CI and 'not significant vs best' flags."""
    records = report.records
    blocks = {block.metric: block for block in report.statistics}
    rows = []
    for method in sorted(records["method"].unique()):
        rows.append({"method": method, "n": int((records["method"] == method).sum())})

    for metric in METRICS:
        means = records.groupby("method")[metric].mean()
        best = means.idxmax() if HIGHER_IS_BETTER[metric] else means.idxmin()
        pairwise = blocks[metric].pairwise if metric in blocks else None
        for row in rows:
            values = records.loc[records["method"] == row["method"], metric]
            lo, hi = bootstrap_ci(values.to_numpy(), seed=seed)
            row[f"{metric}_mean"] = values.mean()
            row[f"{metric}_std"] = values.std()
            row[f"{metric}_ci_low"] = lo
            row[f"{metric}_ci_high"] = hi
            if row["method"] == best:
                row[f"{metric}_ns_vs_best"] = True
            elif pairwise is None:
                # omnibus test did not reject: no method differs from the best
                row[f"{metric}_ns_vs_best"] = True
            else:
                p = pairwise.loc[row["method"], best]
                row[f"{metric}_ns_vs_best"] = bool(p >= ALPHA)

    for row in rows:
        seconds = records.loc[records["method"] == row["method"], "seconds"]
        row["seconds_mean"] = seconds.mean()
        row["seconds_std"] = seconds.std()
    return pd.DataFrame(rows)


def ablation_table(
    records: pd.DataFrame, without: str = "conv", with_: str = "swin"
) -> pd.DataFrame:
    """Variant without vs with window attention, one row per metric."""
    a = records[records["method"] == without].sort_values("image_id")
    b = records[records["method"] == with_].sort_values("image_id")
    rows = []
    for metric in (*METRICS, "seconds"):
        va, vb = a[metric].to_numpy(), b[metric].to_numpy()
        mean_a, mean_b = va.mean(), vb.mean()
        delta = (mean_b - mean_a) / abs(mean_a) * 100.0 if mean_a else float("nan")
        higher_better = HIGHER_IS_BETTER.get(metric, False)
        rows.append(
            {
                "metric": metric,
                f"{without}_mean": mean_a,
                f"{without}_std": va.std(ddof=1),
                f"{with_}_mean": mean_b,
                f"{with_}_std": vb.std(ddof=1),
                "delta_pct": delta,
                "abs_delta_pct": abs(delta),
                "attention_better": bool(
                    mean_b > mean_a if higher_better else mean_b < mean_a
                ),
                "wilcoxon_p": wilcoxon_paired(va, vb),
            }
        )
    return pd.DataFrame(rows)


def export_examples(
    out_dir: Path, image_id: str, pair: ImagePair, preds: dict[str, np.ndarray]
) -> None:
    """HR, LR, predictions and |pred - HR| maps of one held-out phantom."""
    figures = out_dir / "figures"
    write_pgm(figures / f"{image_id}_hr.pgm", pair.hr, 0.0, 1.0)
    write_pgm(figures / f"{image_id}_lr.pgm", pair.lr, 0.0, 1.0)
    diffs = {method: np.abs(pred - pair.hr) for method, pred in preds.items()}
    # shared scale so difference maps compare across methods
    hi = max(float(d.max()) for d in diffs.values()) or 1.0
    for method, pred in preds.items():
        write_pgm(figures / f"{image_id}_{method}.pgm", pred, 0.0, 1.0)
        write_pgm(figures / f"{image_id}_{method}_diff.pgm", diffs[method], 0.0, hi)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    out_dir = config.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out_dir / "experiment.log", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    package_logger = logging.getLogger("rsrdiff")
    previous_level = package_logger.level
    # the run log always records stage progress
    if package_logger.getEffectiveLevel() > logging.INFO:
        package_logger.setLevel(logging.INFO)
    package_logger.addHandler(handler)
    try:
        return _run(config)
    finally:
        package_logger.removeHandler(handler)
        package_logger.setLevel(previous_level)
        handler.close()


def _run(config: ExperimentConfig) -> ExperimentResult:
    out_dir = config.out_dir
    with stage("corpus"):
        corpus = phantom_corpus(
            config.n_train + config.n_test,
            config.size,
            config.factor,
            config.kinds,
            config.seed,
        )
        train_pairs = [pair for _, pair in corpus[: config.n_train]]
        test = corpus[config.n_train :]
        gts = {image_id: pair.hr for image_id, pair in test}

    predictions: dict[str, dict[str, np.ndarray]] = {
        BASELINE: {image_id: pair.lr for image_id, pair in test}
    }
    timings: dict[str, dict[str, float]] = {BASELINE: dict.fromkeys(gts, 0.0)}
    for variant in config.variants:
        with stage(f"train-{variant}"):
            model = obtain_model(config, variant, train_pairs)
        with stage(f"sample-{variant}"):
            predictions[variant], timings[variant] = sample_test_set(
                config, model, test
            )

    with stage("evaluate"):
        records = []
        for method, preds in predictions.items():
            records.extend(evaluate_images(preds, gts, method, seconds=timings[method]))
        report = build_report(records)
        _write_csv(report.to_frame(), out_dir / "report.csv")

    with stage("tables"):
        table1 = method_table(report, seed=config.seed)
        _write_csv(table1, out_dir / "table1.csv")
        table2 = None
        if {"conv", "swin"} <= set(config.variants):
            table2 = ablation_table(report.records)
            _write_csv(table2, out_dir / "table2.csv")

    with stage("export"):
        image_id, pair = test[0]
        export_examples(
            out_dir,
            image_id,
            pair,
            {method: preds[image_id] for method, preds in predictions.items()},
        )

    logger.info(f"Experiment written to {out_dir}")
    return ExperimentResult(
        out_dir=out_dir, report=report, table1=table1, table2=table2
    )
