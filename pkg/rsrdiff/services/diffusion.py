"""Forward kernels and the Gaussian posterior of the residual-shifting chain.

Every kernel is elementwise and pure given its noise input; images may be
(H, W) or (C, H, W). Arithmetic is carried out in float64 whatever the storage
dtype, since beta ratios near t=1 are badly conditioned in float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from rsrdiff.errors import NonFiniteError, ScheduleError, ShapeMismatchError
from rsrdiff.services.scheduler import Schedule

TensorImage = npt.NDArray[np.floating]


def as_image(data: npt.ArrayLike, name: str = "image") -> np.ndarray:
    """Promote to float64 and check the TensorImage contract."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim not in (2, 3) or 0 in arr.shape:
        raise ShapeMismatchError(f"{name} must be (H, W) or (C, H, W)", arr.shape, ())
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


def _same_shape(what: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(what, a.shape, b.shape)


@dataclass(frozen=True)
class ImagePair:
    """Aligned HR/LR slices at the same grid, with the cached residual."""

    hr: np.ndarray
    lr: np.ndarray
    residual: np.ndarray

    @classmethod
    def from_images(cls, hr: npt.ArrayLike, lr: npt.ArrayLike) -> ImagePair:
        hr_arr = as_image(hr, "hr")
        lr_arr = as_image(lr, "lr")
        return cls(hr=hr_arr, lr=lr_arr, residual=residual(hr_arr, lr_arr))


@dataclass(frozen=True)
class GaussianParams:
    """Isotropic Gaussian: per-pixel mean, one scalar variance."""

    mean: np.ndarray
    variance: float

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


def residual(hr: npt.ArrayLike, lr: npt.ArrayLike) -> np.ndarray:
    """e0 = lr - hr."""
    hr = np.asarray(hr, dtype=np.float64)
    lr = np.asarray(lr, dtype=np.float64)
    _same_shape("residual", hr, lr)
    return lr - hr


def forward_step(
    x_prev: npt.ArrayLike,
    e0: npt.ArrayLike,
    t: int,
    schedule: Schedule,
    noise: npt.ArrayLike,
) -> np.ndarray:
    """One transition: x_t = x_{t-1} + alpha_t e0 + sqrt(gamma^2 alpha_t) eps."""
    x_prev = np.asarray(x_prev, dtype=np.float64)
    e0 = np.asarray(e0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    _same_shape("forward_step residual", x_prev, e0)
    _same_shape("forward_step noise", x_prev, noise)
    alpha = schedule.alpha(t)
    return x_prev + alpha * e0 + math.sqrt(schedule.gamma**2 * alpha) * noise


def marginal_params(
    hr: npt.ArrayLike, e0: npt.ArrayLike, t: int, schedule: Schedule
) -> GaussianParams:
    """q(x_t | hr, lr) = N(hr + beta_t e0, gamma^2 beta_t I)."""
    hr = np.asarray(hr, dtype=np.float64)
    e0 = np.asarray(e0, dtype=np.float64)
    _same_shape("marginal residual", hr, e0)
    beta = schedule.beta(schedule.check_step(t))
    return GaussianParams(mean=hr + beta * e0, variance=schedule.gamma**2 * beta)


def forward_marginal(
    hr: npt.ArrayLike,
    e0: npt.ArrayLike,
    t: int,
    schedule: Schedule,
    noise: npt.ArrayLike,
) -> np.ndarray:
    """Sample x_t directly from hr: hr + beta_t e0 + gamma sqrt(beta_t) eps."""
    params = marginal_params(hr, e0, t, schedule)
    noise = np.asarray(noise, dtype=np.float64)
    _same_shape("forward_marginal noise", params.mean, noise)
    return params.mean + params.std * noise


def posterior_params(
    x_t: npt.ArrayLike,
    x0_hat: npt.ArrayLike,
    beta_t: float,
    beta_prev: float,
    gamma: float,
) -> GaussianParams:
    """Gaussian q(x_prev | x_t, x0) written with the increment beta_t - beta_prev.

    With consecutive training steps the increment is alpha_t; any pair of
    sub-schedule levels works the same way because the marginal is closed-form.
    """
    if not 0 <= beta_prev < beta_t:
        raise ScheduleError(
            f"Posterior needs 0 <= beta_prev < beta_t, got {beta_prev} and {beta_t}"
        )
    x_t = np.asarray(x_t, dtype=np.float64)
    x0_hat = np.asarray(x0_hat, dtype=np.float64)
    _same_shape("posterior estimate", x_t, x0_hat)
    delta = beta_t - beta_prev
    mean = (beta_prev / beta_t) * x_t + (delta / beta_t) * x0_hat
    variance = gamma**2 * delta * beta_prev / beta_t
    return GaussianParams(mean=mean, variance=variance)


def reverse_step(
    x_t: npt.ArrayLike,
    x0_hat: npt.ArrayLike,
    beta_t: float,
    beta_prev: float,
    gamma: float,
    noise: npt.ArrayLike,
) -> np.ndarray:
    """Draw x_prev = mu + sqrt(var) eps from the posterior."""
    params = posterior_params(x_t, x0_hat, beta_t, beta_prev, gamma)
    noise = np.asarray(noise, dtype=np.float64)
    _same_shape("reverse_step noise", params.mean, noise)
    if params.variance == 0.0:
        return params.mean
    return params.mean + params.std * noise


def make_image_pair(hr: npt.ArrayLike, lr: npt.ArrayLike) -> ImagePair:
    return ImagePair.from_images(hr, lr)
