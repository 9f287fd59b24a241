"""Shifting schedule {beta_t}, its increments {alpha_t} and few-step subsets."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
import pandas as pd

from rsrdiff.errors import ScheduleError
from rsrdiff.models import ScheduleConfig

logger = logging.getLogger(__name__)

ENDPOINT_TOLERANCE = 1e-12

Selection = Literal["uniform", "geometric"]


@dataclass(frozen=True)
class Schedule:
    """Immutable shifting sequence.

    ``betas`` has T+1 entries with ``betas[0] = 0`` so the final reverse step
    is well posed. ``alphas`` is stored with the same indexing
    (``alphas[0] = 0``, ``alphas[t] = betas[t] - betas[t-1]`` for t = 1..T).
    """

    betas: np.ndarray
    alphas: np.ndarray
    gamma: float

    @property
    def T(self) -> int:
        return len(self.betas) - 1

    @property
    def beta_T(self) -> float:
        return float(self.betas[-1])

    def check_step(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise ScheduleError(f"Timestep {t} outside 1..{self.T}")
        return int(t)

    def beta(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ScheduleError(f"Timestep {t} outside 0..{self.T}")
        return float(self.betas[t])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self.check_step(t)])

    def to_frame(self) -> pd.DataFrame:
        t = np.arange(1, self.T + 1)
        return pd.DataFrame(
            {
                "t": t,
                "beta": self.betas[1:],
                "alpha": self.alphas[1:],
                "sqrt_beta": np.sqrt(self.betas[1:]),
            }
        )


@dataclass(frozen=True)
class SubSchedule:
    """K inference timesteps tau_1 < ... < tau_K = T with beta prefix 0."""

    taus: tuple[int, ...]
    betas_at_taus: np.ndarray

    @property
    def K(self) -> int:
        return len(self.taus)

    @property
    def delta_betas(self) -> np.ndarray:
        return np.diff(self.betas_at_taus)


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.ascontiguousarray(values, dtype=np.float64)
    values.setflags(write=False)
    return values


def build_schedule(config: ScheduleConfig) -> Schedule:
    """Evaluate the geometric rule for sqrt(beta_t), t = 1..T.

    sqrt(beta_t) = sqrt(beta_1) * exp(((t-1)/(T-1))^p * log(sqrt(beta_T/beta_1)))
    The rule hits both endpoints, so it is applied over the whole range.
    """
    T = config.T
    if T < 2:
        raise ScheduleError(f"T must be at least 2, got {T}")

    t = np.arange(1, T + 1, dtype=np.float64)
    exponent = ((t - 1.0) / (T - 1.0)) ** config.p
    sqrt_betas = math.sqrt(config.beta_1) * np.exp(
        exponent * math.log(math.sqrt(config.beta_T / config.beta_1))
    )
    betas = np.concatenate([[0.0], sqrt_betas**2])
    # pin the endpoints against exp/log rounding
    betas[1] = config.beta_1
    betas[T] = config.beta_T

    alphas = np.concatenate([[0.0], np.diff(betas)])
    if np.any(alphas[1:] <= 0):
        raise ScheduleError("Shifting sequence is not strictly increasing")
    if abs(alphas.sum() - betas[T]) > ENDPOINT_TOLERANCE:
        raise ScheduleError("Increments do not telescope to beta_T")

    logger.debug(f"Built schedule T={T} p={config.p} gamma={config.gamma}")
    return Schedule(betas=_frozen(betas), alphas=_frozen(alphas), gamma=config.gamma)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _uniform_taus(T: int, K: int) -> list[int]:
    # k*T/K exactly in rationals before rounding
    return [_round_half_up(k * T / K) for k in range(1, K + 1)]


def _geometric_taus(schedule: Schedule, K: int) -> list[int]:
    sqrt_betas = np.sqrt(schedule.betas[1:])
    targets = np.geomspace(sqrt_betas[0], sqrt_betas[-1], K + 1)[1:]
    return [int(np.argmin(np.abs(sqrt_betas - target))) + 1 for target in targets]


def sub_schedule(
    schedule: Schedule, K: int, selection: Selection = "uniform"
) -> SubSchedule:
    """Pick K of the T training steps for sampling.

    ``uniform`` takes round_half_up(k*T/K); ``geometric`` takes the steps whose
    sqrt(beta) is closest to K log-spaced levels up to sqrt(beta_T). Duplicates
    are dropped and the last index is always T.
    """
    T = schedule.T
    if not 1 <= K <= T:
        raise ScheduleError(f"Sub-schedule size K={K} outside 1..{T}")

    if selection == "uniform":
        raw = _uniform_taus(T, K)
    elif selection == "geometric":
        raw = _geometric_taus(schedule, K)
    else:
        raise ScheduleError(f"Unknown sub-schedule selection '{selection}'")

    taus = sorted({min(max(tau, 1), T) for tau in raw} | {T})
    betas_at_taus = np.concatenate([[0.0], schedule.betas[taus]])
    if np.any(np.diff(betas_at_taus) <= 0):
        raise ScheduleError("Sub-schedule beta increments must be positive")
    return SubSchedule(taus=tuple(taus), betas_at_taus=_frozen(betas_at_taus))
