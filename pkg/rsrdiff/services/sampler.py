"""Few-step reverse sampling from the LR-centred prior."""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Protocol

import numpy as np
import numpy.typing as npt

from rsrdiff.config import worker_count
from rsrdiff.errors import NonFiniteError, ScheduleError, ShapeMismatchError
from rsrdiff.services.diffusion import as_image, reverse_step
from rsrdiff.services.scheduler import Schedule, SubSchedule

logger = logging.getLogger(__name__)


class Denoiser(Protocol):
    """g(x_t, x_lr, t) -> estimate of the HR image, same shape as x_t."""

    def __call__(self, x_t: np.ndarray, x_lr: np.ndarray, t: int) -> np.ndarray: ...


@dataclass(frozen=True)
class SamplerConfig:
    sub: SubSchedule
    gamma: float
    seed: int = 0
    deterministic_last_step: bool = True

    def __post_init__(self) -> None:
        if self.sub.K < 1:
            raise ScheduleError("Sampler needs a non-empty sub-schedule")


def slice_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for slice ``index`` of a run seeded with ``seed``."""
    state = np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)
    return int(state[0])


def _prior_sample(
    x_lr: np.ndarray, beta_T: float, gamma: float, rng: np.random.Generator
) -> np.ndarray:
    return x_lr + gamma * math.sqrt(beta_T) * rng.standard_normal(x_lr.shape)


def init_sample(
    x_lr: npt.ArrayLike, schedule: Schedule, rng: np.random.Generator
) -> np.ndarray:
    """x_T = x_lr + gamma sqrt(beta_T) eps."""
    x_lr = as_image(x_lr, "x_lr")
    return _prior_sample(x_lr, schedule.beta_T, schedule.gamma, rng)


def oracle_denoiser(hr: npt.ArrayLike) -> Denoiser:
    """Denoiser that always answers ``hr``; used to check the sampler."""
    target = np.array(hr, dtype=np.float64)
    target.setflags(write=False)

    def denoise(x_t: np.ndarray, x_lr: np.ndarray, t: int) -> np.ndarray:
        return target

    return denoise


def run_sampler(
    x_lr: npt.ArrayLike, denoiser: Denoiser, config: SamplerConfig
) -> np.ndarray:
    """Run the K reverse steps tau_K -> ... -> tau_1 -> level 0."""
    x_lr = as_image(x_lr, "x_lr")
    rng = np.random.default_rng(config.seed)
    sub = config.sub
    betas = sub.betas_at_taus

    x = _prior_sample(x_lr, float(betas[-1]), config.gamma, rng)
    for k in range(sub.K, 0, -1):
        t = sub.taus[k - 1]
        x0_hat = np.asarray(denoiser(x, x_lr, t), dtype=np.float64)
        if x0_hat.shape != x.shape:
            raise ShapeMismatchError(
                f"denoiser output at k={k}", x0_hat.shape, x.shape
            )
        if k == 1 and config.deterministic_last_step:
            noise = np.zeros_like(x)
        else:
            noise = rng.standard_normal(x.shape)
        x = reverse_step(
            x, x0_hat, float(betas[k]), float(betas[k - 1]), config.gamma, noise
        )
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"Non-finite sample at timestep {t}", k=k)
        logger.debug(f"Reverse step k={k} t={t} beta={betas[k]:.6g}")
    return x


def sample_slices(
    lr_slices: Sequence[npt.ArrayLike],
    denoiser: Denoiser,
    config: SamplerConfig,
    workers: int | None = None,
) -> list[np.ndarray]:
    """Sample independent slices concurrently, one seeded stream per slice."""
    workers = workers or worker_count()

    def work(index: int) -> np.ndarray:
        slice_config = replace(config, seed=slice_seed(config.seed, index))
        return run_sampler(lr_slices[index], denoiser, slice_config)

    if workers == 1 or len(lr_slices) < 2:
        return [work(i) for i in range(len(lr_slices))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(work, range(len(lr_slices))))
