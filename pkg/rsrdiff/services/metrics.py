"""Image quality metrics and the per-method report built from them."""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import numpy.typing as npt
import pandas as pd
import torch
from scipy import signal
from skimage.metrics import mean_squared_error, structural_similarity

from rsrdiff.config import worker_count
from rsrdiff.errors import RsrDiffError, ShapeMismatchError
from rsrdiff.services.statistics import ALPHA, dunn_bonferroni, kruskal_wallis
from rsrdiff.services.trainer import perceptual_proxy

logger = logging.getLogger(__name__)

METRICS = ("psnr", "ssim", "gmsd", "perceptual")
# True where larger values are better
HIGHER_IS_BETTER = {"psnr": True, "ssim": True, "gmsd": False, "perceptual": False}
SSIM_MIN_SIZE = 11
SSIM_SIGMA = 1.5
GMSD_C = 170.0
PREWITT_X = np.array([[1, 0, -1], [1, 0, -1], [1, 0, -1]], dtype=np.float64) / 3.0


def _pair(
    pred: npt.ArrayLike, gt: npt.ArrayLike, what: str
) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatchError(what, pred.shape, gt.shape)
    return pred, gt


def psnr(pred: npt.ArrayLike, gt: npt.ArrayLike, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical images."""
    pred, gt = _pair(pred, gt, "psnr")
    if data_range <= 0:
        raise ValueError(f"data_range must be positive, got {data_range}")
    mse = mean_squared_error(gt, pred)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(data_range**2 / mse))


def ssim(pred: npt.ArrayLike, gt: npt.ArrayLike, data_range: float = 1.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03.

    Border pixels whose window leaves the image are excluded from the mean.
    """
    pred, gt = _pair(pred, gt, "ssim")
    h, w = pred.shape[-2:]
    if min(h, w) < SSIM_MIN_SIZE:
        raise ShapeMismatchError(
            "ssim needs images of at least 11x11", (h, w), (SSIM_MIN_SIZE,) * 2
        )
    return float(
        structural_similarity(
            pred,
            gt,
            data_range=data_range,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            channel_axis=0 if pred.ndim == 3 else None,
        )
    )


def gradient_magnitude(img: np.ndarray) -> np.ndarray:
    gx = signal.convolve2d(img, PREWITT_X, mode="same", boundary="symm")
    gy = signal.convolve2d(img, PREWITT_X.T, mode="same", boundary="symm")
    return np.sqrt(gx**2 + gy**2)


def gmsd(pred: npt.ArrayLike, gt: npt.ArrayLike, data_range: float = 1.0) -> float:
    """Standard deviation of the gradient-magnitude similarity map.

    The stabilising constant is 170 on a 0-255 scale, rescaled to
    ``data_range``. Computed at full resolution.
    """
    pred, gt = _pair(pred, gt, "gmsd")
    c = GMSD_C * (data_range / 255.0) ** 2
    planes = zip(
        pred.reshape(-1, *pred.shape[-2:]),
        gt.reshape(-1, *gt.shape[-2:]),
        strict=True,
    )
    maps = []
    for p, g in planes:
        mp, mg = gradient_magnitude(p), gradient_magnitude(g)
        maps.append((2 * mp * mg + c) / (mp**2 + mg**2 + c))
    return float(np.std(np.stack(maps)))


def perceptual_distance(pred: npt.ArrayLike, gt: npt.ArrayLike) -> float:
    """Feature distance of the fixed-filter perceptual proxy (float64)."""
    pred, gt = _pair(pred, gt, "perceptual")
    shape = (-1, 1, *pred.shape[-2:])
    with torch.no_grad():
        return float(perceptual_proxy(pred.reshape(shape), gt.reshape(shape)))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricRecord:
    image_id: str
    method: str
    psnr: float
    ssim: float
    gmsd: float
    perceptual: float
    seconds: float = float("nan")


@dataclass
class StatisticsBlock:
    metric: str
    test: str
    statistic: float
    p_value: float
    # Dunn-Bonferroni p-values, only when the omnibus test rejects
    pairwise: pd.DataFrame | None = None


@dataclass
class MetricReport:
    records: pd.DataFrame
    aggregates: pd.DataFrame
    statistics: list[StatisticsBlock] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        """Per-image rows followed by mean/std rows and a statistics footer."""
        rows = self.records.assign(section="image")
        agg = self.aggregates.reset_index().assign(section="aggregate")
        stats_rows = []
        for block in self.statistics:
            stats_rows.append(
                {
                    "section": "statistics",
                    "method": block.test,
                    "image_id": block.metric,
                    "statistic": block.statistic,
                    "p_value": block.p_value,
                }
            )
            if block.pairwise is not None:
                for a in block.pairwise.index:
                    for b in block.pairwise.columns:
                        stats_rows.append(
                            {
                                "section": "dunn",
                                "method": f"{a} vs {b}",
                                "image_id": block.metric,
                                "p_value": block.pairwise.loc[a, b],
                            }
                        )
        return pd.concat([rows, agg, pd.DataFrame(stats_rows)], ignore_index=True)


def evaluate_image(
    image_id: str,
    method: str,
    pred: npt.ArrayLike,
    gt: npt.ArrayLike,
    data_range: float = 1.0,
    seconds: float = float("nan"),
) -> MetricRecord:
    return MetricRecord(
        image_id=image_id,
        method=method,
        psnr=psnr(pred, gt, data_range),
        ssim=ssim(pred, gt, data_range),
        gmsd=gmsd(pred, gt, data_range),
        perceptual=perceptual_distance(pred, gt),
        seconds=seconds,
    )


def evaluate_images(
    preds: Mapping[str, npt.ArrayLike],
    gts: Mapping[str, npt.ArrayLike],
    method: str,
    data_range: float = 1.0,
    seconds: Mapping[str, float] | None = None,
    workers: int | None = None,
) -> list[MetricRecord]:
    """Score every prediction against the ground truth with the same id."""
    missing = sorted(set(preds) - set(gts))
    if missing:
        raise RsrDiffError(f"No ground truth for {missing}")
    seconds = seconds or {}
    ids = sorted(preds)

    def score(image_id: str) -> MetricRecord:
        return evaluate_image(
            image_id,
            method,
            preds[image_id],
            gts[image_id],
            data_range,
            seconds.get(image_id, float("nan")),
        )

    with ThreadPoolExecutor(max_workers=workers or worker_count()) as pool:
        return list(pool.map(score, ids))


def records_frame(records: list[MetricRecord]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in records])


def method_statistics(records: pd.DataFrame, metric: str) -> StatisticsBlock:
    """Kruskal-Wallis across methods, Dunn pairs only when it rejects."""
    methods = sorted(records["method"].unique())
    groups = [records.loc[records["method"] == m, metric].to_numpy() for m in methods]
    h, p = kruskal_wallis(groups)
    block = StatisticsBlock(
        metric=metric, test="kruskal-wallis", statistic=h, p_value=p
    )
    if p < ALPHA:
        block.pairwise = pd.DataFrame(
            dunn_bonferroni(groups), index=methods, columns=methods
        )
    return block


def build_report(records: list[MetricRecord] | pd.DataFrame) -> MetricReport:
    frame = records if isinstance(records, pd.DataFrame) else records_frame(records)
    aggregates = frame.groupby("method")[list(METRICS)].agg(["mean", "std"])
    aggregates.columns = [f"{metric}_{stat}" for metric, stat in aggregates.columns]
    statistics = []
    if frame["method"].nunique() >= 2:
        statistics = [method_statistics(frame, metric) for metric in METRICS]
    for block in statistics:
        logger.info(
            f"{block.metric}: H={block.statistic:.4g} p={block.p_value:.3g}"
            + (" (pairwise reported)" if block.pairwise is not None else "")
        )
    return MetricReport(records=frame, aggregates=aggregates, statistics=statistics)
