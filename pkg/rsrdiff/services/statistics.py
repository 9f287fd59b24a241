"""Nonparametric comparisons across methods.

The pipeline goes straight to rank tests; normality is never assumed.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import numpy.typing as npt
import scikit_posthocs as sp
from scipy import stats

ALPHA = 0.05


def _check_groups(groups: Sequence[npt.ArrayLike]) -> list[np.ndarray]:
    arrays = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(arrays) < 2:
        raise ValueError(f"Need at least two groups, got {len(arrays)}")
    if any(a.size == 0 for a in arrays):
        raise ValueError("Every group must be non-empty")
    return arrays


def _all_identical(arrays: list[np.ndarray]) -> bool:
    pooled = np.concatenate(arrays)
    return bool(np.all(pooled == pooled[0]))


def kruskal_wallis(groups: Sequence[npt.ArrayLike]) -> tuple[float, float]:
    """Tie-corrected H statistic and its chi-square (k-1) p-value.

    All-identical data carries no ranking information: (0.0, 1.0).
    """
    arrays = _check_groups(groups)
    if _all_identical(arrays):
        return 0.0, 1.0
    result = stats.kruskal(*arrays)
    return float(result.statistic), float(result.pvalue)


def dunn_bonferroni(groups: Sequence[npt.ArrayLike]) -> np.ndarray:
    """Pairwise two-sided Dunn p-values, Bonferroni adjusted and capped at 1."""
    arrays = _check_groups(groups)
    if _all_identical(arrays):
        return np.ones((len(arrays), len(arrays)))
    matrix = sp.posthoc_dunn([a.tolist() for a in arrays], p_adjust="bonferroni")
    values = np.minimum(matrix.to_numpy(dtype=np.float64), 1.0)
    np.fill_diagonal(values, 1.0)
    return values


def bootstrap_ci(
    sample: npt.ArrayLike,
    iterations: int = 10_000,
    level: float = 0.95,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval of the sample mean."""
    data = np.asarray(sample, dtype=np.float64).ravel()
    if data.size == 0:
        raise ValueError("bootstrap_ci needs a non-empty sample")
    if data.size == 1 or np.all(data == data[0]):
        return float(data[0]), float(data[0])
    result = stats.bootstrap(
        (data,),
        np.mean,
        n_resamples=iterations,
        confidence_level=level,
        method="percentile",
        random_state=np.random.default_rng(seed),
    )
    interval = result.confidence_interval
    return float(interval.low), float(interval.high)


def wilcoxon_paired(a: npt.ArrayLike, b: npt.ArrayLike) -> float:
    """Two-sided signed-rank p-value for paired samples; 1.0 when a == b."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"Paired samples differ in length: {a.size} vs {b.size}")
    if np.all(a == b):
        return 1.0
    return float(stats.wilcoxon(a, b).pvalue)
