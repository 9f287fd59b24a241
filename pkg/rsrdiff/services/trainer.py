"""Denoiser training: closed-form forward sampling, fidelity + perceptual loss,
rectified adaptive moments under warm-up and cosine decay."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import numpy.typing as npt
import pandas as pd
import torch
import torch.nn.functional as F
from torch import nn

from rsrdiff.errors import NonFiniteError, ShapeMismatchError
from rsrdiff.models import NetConfig, TrainConfig
from rsrdiff.services.denoiser import DenoiserNet, init_params
from rsrdiff.services.diffusion import ImagePair, forward_marginal
from rsrdiff.services.scheduler import Schedule, build_schedule

logger = logging.getLogger(__name__)

PROXY_SEED = 20240229
PROXY_WIDTHS = (1, 8, 16, 32)
PROXY_EPS = 1e-10
RECTIFY_THRESHOLD = 4.0

# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


@lru_cache(maxsize=4)
def _proxy_filters(dtype: torch.dtype) -> tuple[torch.Tensor, ...]:
    generator = torch.Generator().manual_seed(PROXY_SEED)
    filters = []
    for c_in, c_out in zip(PROXY_WIDTHS[:-1], PROXY_WIDTHS[1:], strict=True):
        weight = torch.randn(
            c_out, c_in, 3, 3, generator=generator, dtype=torch.float64
        )
        filters.append((weight / math.sqrt(c_in * 9)).to(dtype))
    return tuple(filters)


def _proxy_features(x: torch.Tensor) -> list[torch.Tensor]:
    features = []
    for index, weight in enumerate(_proxy_filters(x.dtype)):
        x = torch.tanh(F.conv2d(x, weight, stride=1 if index == 0 else 2, padding=1))
        norm = torch.sqrt(torch.sum(x * x, dim=1, keepdim=True) + PROXY_EPS)
        features.append(x / norm)
    return features


def _as_batch(image: torch.Tensor | npt.ArrayLike) -> torch.Tensor:
    if not isinstance(image, torch.Tensor):
        image = torch.as_tensor(np.asarray(image, dtype=np.float64))
    while image.ndim < 4:
        image = image.unsqueeze(0)
    return image


def perceptual_proxy(
    a: torch.Tensor | npt.ArrayLike, b: torch.Tensor | npt.ArrayLike
) -> torch.Tensor:
    """Feature distance through a fixed, seeded bank of random conv layers.

    Each layer's activations are unit-normalised across channels; the result
    is the per-layer mean squared feature difference averaged over layers.
    Stands in for a learned perceptual metric; zero for identical inputs and
    symmetric in its arguments.
    """
    a, b = _as_batch(a), _as_batch(b)
    if a.shape != b.shape:
        raise ShapeMismatchError("perceptual_proxy", tuple(a.shape), tuple(b.shape))
    b = b.to(a.dtype)
    distances = [
        torch.mean(torch.sum((fa - fb) ** 2, dim=1))
        for fa, fb in zip(_proxy_features(a), _proxy_features(b), strict=True)
    ]
    return torch.stack(distances).mean()


@dataclass(frozen=True)
class LossTerms:
    total: torch.Tensor
    fidelity: torch.Tensor
    perceptual: torch.Tensor


def total_loss(x0_hat: torch.Tensor, hr: torch.Tensor, lam: float) -> LossTerms:
    """lam * mean((x0_hat - hr)^2) + perceptual_proxy(x0_hat, hr).

    Per-pixel mean keeps lam resolution independent. The KL prefactor is
    dropped.
    """
    if x0_hat.shape != hr.shape:
        raise ShapeMismatchError("total_loss", tuple(x0_hat.shape), tuple(hr.shape))
    fidelity = torch.mean((x0_hat - hr) ** 2)
    perceptual = perceptual_proxy(x0_hat, hr)
    return LossTerms(
        total=lam * fidelity + perceptual, fidelity=fidelity, perceptual=perceptual
    )


def total_loss_grad(
    x0_hat: npt.ArrayLike, hr: npt.ArrayLike, lam: float
) -> tuple[float, np.ndarray]:
    """Loss value and its gradient with respect to ``x0_hat`` (float64)."""
    estimate = _as_batch(x0_hat).clone().requires_grad_(True)
    target = _as_batch(hr)
    loss = total_loss(estimate, target, lam).total
    (grad,) = torch.autograd.grad(loss, estimate)
    return loss.item(), grad.numpy().reshape(np.shape(x0_hat))


# ---------------------------------------------------------------------------
# Learning rate and optimiser
# ---------------------------------------------------------------------------


def lr_at_step(step: int, config: TrainConfig) -> float:
    """Linear warm-up to lr_max, then cosine decay to zero at total_steps."""
    step = min(max(step, 0), config.total_steps)
    if step < config.warmup_steps:
        return config.lr_max * step / config.warmup_steps
    progress = (step - config.warmup_steps) / (config.total_steps - config.warmup_steps)
    return config.lr_max * 0.5 * (1.0 + math.cos(math.pi * progress))


def rho_terms(step: int, beta2: float) -> tuple[float, float]:
    """(rho_inf, rho_t) of the variance rectification."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    beta2_t = beta2**step
    return rho_inf, rho_inf - 2.0 * step * beta2_t / (1.0 - beta2_t)


def rectified_adam_update(
    param: torch.Tensor,
    grad: torch.Tensor,
    exp_avg: torch.Tensor,
    exp_avg_sq: torch.Tensor,
    step: int,
    lr: float,
    betas: tuple[float, float],
    eps: float,
) -> None:
    """In-place update of one tensor; ``step`` counts from 1."""
    beta1, beta2 = betas
    exp_avg.mul_(beta1).add_(grad, alpha=1.0 - beta1)
    exp_avg_sq.mul_(beta2).addcmul_(grad, grad, value=1.0 - beta2)

    m_hat = exp_avg / (1.0 - beta1**step)
    rho_inf, rho_t = rho_terms(step, beta2)
    if rho_t > RECTIFY_THRESHOLD:
        rect = math.sqrt(
            (rho_t - 4.0) * (rho_t - 2.0) * rho_inf
            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)
        )
        v_hat = torch.sqrt(exp_avg_sq / (1.0 - beta2**step))
        param.sub_(lr * rect * m_hat / (v_hat + eps))
    else:
        param.sub_(lr * m_hat)


class RectifiedAdam(torch.optim.Optimizer):
    """Adam with variance rectification; momentum-only while rho_t <= 4."""

    def __init__(
        self,
        params: Iterable[nn.Parameter],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        super().__init__(params, {"lr": lr, "betas": betas, "eps": eps})

    @torch.no_grad()
    def step(self, closure: Callable[[], float] | None = None) -> float | None:
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()

        params = [p for group in self.param_groups for p in group["params"]]
        for p in params:
            if p.grad is not None and not torch.all(torch.isfinite(p.grad)):
                raise NonFiniteError("Rejected optimiser step: non-finite gradient")

        for group in self.param_groups:
            for p in group["params"]:
                if p.grad is None:
                    continue
                state = self.state[p]
                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(p)
                    state["exp_avg_sq"] = torch.zeros_like(p)
                state["step"] += 1
                rectified_adam_update(
                    p,
                    p.grad,
                    state["exp_avg"],
                    state["exp_avg_sq"],
                    state["step"],
                    group["lr"],
                    group["betas"],
                    group["eps"],
                )
        return loss


def optimizer_step(optimizer: RectifiedAdam, lr: float) -> None:
    """Apply one update at learning rate ``lr`` to every parameter group."""
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepResult:
    step: int
    lr: float
    loss: float
    fidelity: float
    perceptual: float


def draw_timesteps(rng: np.random.Generator, T: int, n: int) -> np.ndarray:
    """t ~ Uniform({1, ..., T})."""
    return rng.integers(1, T + 1, size=n)


def _dtype(config: TrainConfig) -> torch.dtype:
    return torch.float64 if config.f64_mode else torch.float32


def train_step(
    pairs: Sequence[ImagePair],
    model: DenoiserNet,
    optimizer: RectifiedAdam,
    schedule: Schedule,
    config: TrainConfig,
    rng: np.random.Generator,
    step: int = 0,
) -> StepResult:
    """One gradient step on a batch of pairs (a single pair is a batch of one)."""
    timesteps = draw_timesteps(rng, schedule.T, len(pairs))
    noisy = []
    for pair, t in zip(pairs, timesteps, strict=True):
        noise = rng.standard_normal(pair.hr.shape)
        noisy.append(forward_marginal(pair.hr, pair.residual, int(t), schedule, noise))
    x_t = np.stack(noisy)
    dtype = _dtype(config)
    x_t = torch.as_tensor(x_t, dtype=dtype)[:, None]
    x_lr = torch.as_tensor(np.stack([p.lr for p in pairs]), dtype=dtype)[:, None]
    hr = torch.as_tensor(np.stack([p.hr for p in pairs]), dtype=dtype)[:, None]

    model.train()
    optimizer.zero_grad(set_to_none=True)
    terms = total_loss(model(x_t, x_lr, torch.as_tensor(timesteps)), hr, config.lam)
    if not torch.isfinite(terms.total):
        raise NonFiniteError(f"Non-finite training loss at step {step}")
    terms.total.backward()
    nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)

    lr = lr_at_step(step + 1, config)
    optimizer_step(optimizer, lr)
    return StepResult(
        step=step,
        lr=lr,
        loss=terms.total.item(),
        fidelity=terms.fidelity.item(),
        perceptual=terms.perceptual.item(),
    )


@dataclass
class TrainResult:
    model: DenoiserNet
    history: pd.DataFrame


def train(
    pairs: Sequence[ImagePair],
    config: TrainConfig,
    net_config: NetConfig,
    log_path: Path | None = None,
) -> TrainResult:
    """Run ``config.total_steps`` steps drawing batches with replacement."""
    if not pairs:
        raise ValueError("Training needs at least one image pair")
    rng = np.random.default_rng(config.seed)
    schedule = build_schedule(config.schedule_config())
    model = init_params(net_config, config.seed, dtype=_dtype(config))
    optimizer = RectifiedAdam(
        model.parameters(),
        lr=lr_at_step(1, config),
        betas=(config.beta1_opt, config.beta2_opt),
    )

    rows = []
    for step in range(config.total_steps):
        batch = rng.integers(0, len(pairs), size=config.batch_size)
        result = train_step(
            [pairs[i] for i in batch], model, optimizer, schedule, config, rng, step
        )
        rows.append(result)
        if step % config.log_every == 0 or step == config.total_steps - 1:
            logger.info(
                f"[{net_config.variant}] step {step} lr={result.lr:.3g} "
                f"loss={result.loss:.5f} fidelity={result.fidelity:.5f} "
                f"perceptual={result.perceptual:.5f}"
            )

    history = pd.DataFrame(
        [(r.step, r.lr, r.loss, r.fidelity, r.perceptual) for r in rows],
        columns=["step", "lr", "loss", "fidelity", "perceptual"],
    )
    if log_path is not None:
        log_path.parent.mkdir(parents=True, exist_ok=True)
        history.to_csv(log_path, index=False, float_format="%.9g")
    return TrainResult(model=model.eval(), history=history)


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def gradient_check(
    model: DenoiserNet,
    x_t: torch.Tensor,
    x_lr: torch.Tensor,
    t: torch.Tensor | int,
    hr: torch.Tensor,
    lam: float = 10.0,
    n_params: int = 100,
    seed: int = 0,
    h: float = 1e-3,
    floor: float = 1e-4,
) -> float:
    """Worst relative error between autograd and finite differences.

    Uses the fourth-order central stencil on ``n_params`` randomly chosen
    scalars of the active parameters; errors are measured relative to
    max(|analytic|, |numeric|, floor). Gradients smaller than ``floor`` are
    therefore held to an absolute tolerance, since the stencil's truncation
    error there is of the same order as the gradient itself.
    """
    named = model.active_parameters()
    params = [p for _, p in named]

    def loss_value() -> torch.Tensor:
        return total_loss(model(x_t, x_lr, t), hr, lam).total

    grads = torch.autograd.grad(loss_value(), params)
    sizes = np.array([p.numel() for p in params])
    rng = np.random.default_rng(seed)
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_params, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    with torch.no_grad():
        for flat in picks:
            index = int(np.searchsorted(offsets, flat, side="right") - 1)
            param, local = params[index], int(flat - offsets[index])
            view = param.view(-1)
            original = view[local].item()

            losses = []
            for delta in (2 * h, h, -h, -2 * h):
                view[local] = original + delta
                losses.append(float(loss_value()))
            up2, up1, down1, down2 = losses
            numeric = (-up2 + 8 * up1 - 8 * down1 + down2) / (12 * h)
            view[local] = original
            analytic = grads[index].view(-1)[local].item()
            scale = max(abs(analytic), abs(numeric), floor)
            worst = max(worst, abs(analytic - numeric) / scale)
    return worst
