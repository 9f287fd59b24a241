"""Pydantic configuration models - validated once, shared by every service."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Literal

import pydantic
from pydantic import BaseModel, ConfigDict, Field

# ---------------------------------------------------------------------------
# Scheduler
# ---------------------------------------------------------------------------

DEFAULT_GAMMA = 2.0
DEFAULT_BETA_T = 0.9999
# gamma * sqrt(beta_1) must stay in the small-noise regime of the first step
MAX_FIRST_STEP_STD = 0.05


class ScheduleConfig(BaseModel):
    """Parameters of the non-uniform geometric shifting schedule."""

    model_config = ConfigDict(frozen=True)

    T: int = 15
    gamma: float = DEFAULT_GAMMA
    p: float = 0.3
    beta_1: float = (0.04 / DEFAULT_GAMMA) ** 2
    beta_T: float = DEFAULT_BETA_T

    @pydantic.model_validator(mode="before")
    @classmethod
    def default_beta_1_from_gamma(cls, data: Any) -> Any:
        # beta_1 = (0.04 / gamma)^2 unless given explicitly
        if isinstance(data, dict) and data.get("beta_1") is None:
            data = {k: v for k, v in data.items() if k != "beta_1"}
            gamma = float(data.get("gamma", DEFAULT_GAMMA))
            if gamma > 0:
                data["beta_1"] = (0.04 / gamma) ** 2
        return data

    @pydantic.field_validator("T")
    @classmethod
    def validate_steps(cls, v: int) -> int:
        if v < 2:
            raise ValueError(f"T must be at least 2, got {v}")
        return v

    @pydantic.field_validator("gamma", "p")
    @classmethod
    def validate_positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError(f"Expected a positive value, got {v}")
        return v

    @pydantic.model_validator(mode="after")
    def validate_endpoints(self) -> ScheduleConfig:
        if not 0 < self.beta_1 < self.beta_T < 1:
            raise ValueError(
                f"Require 0 < beta_1 ({self.beta_1}) < beta_T ({self.beta_T}) < 1"
            )
        first_std = self.gamma * math.sqrt(self.beta_1)
        if first_std > MAX_FIRST_STEP_STD + 1e-12:
            raise ValueError(
                f"gamma * sqrt(beta_1) = {first_std:.4g} exceeds "
                f"{MAX_FIRST_STEP_STD}; the first step must be nearly noise-free"
            )
        return self


# ---------------------------------------------------------------------------
# Denoiser network
# ---------------------------------------------------------------------------


class NetConfig(BaseModel):
    """Shape of the encoder-decoder denoiser."""

    model_config = ConfigDict(frozen=True)

    base_channels: int = Field(32, gt=0)
    depth: int = Field(2, ge=1)
    use_window_attention: bool = True
    window_size: int = Field(8, gt=0)
    heads: int = Field(4, gt=0)
    time_embed_dim: int = Field(64, gt=0)

    @pydantic.field_validator("time_embed_dim")
    @classmethod
    def validate_even_embedding(cls, v: int) -> int:
        if v % 2:
            raise ValueError(f"time_embed_dim must be even, got {v}")
        return v

    @pydantic.model_validator(mode="after")
    def validate_heads(self) -> NetConfig:
        if self.bottleneck_channels % self.heads:
            raise ValueError(
                f"heads ({self.heads}) must divide the bottleneck channel count "
                f"({self.bottleneck_channels})"
            )
        return self

    @property
    def bottleneck_channels(self) -> int:
        return self.base_channels * 2**self.depth

    @property
    def variant(self) -> str:
        return "swin" if self.use_window_attention else "conv"

    @property
    def min_size(self) -> int:
        return 4 * 2**self.depth


VARIANTS: dict[str, bool] = {"conv": False, "swin": True}


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


class TrainConfig(BaseModel):
    """Optimisation settings for the denoiser."""

    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    lam: float = Field(10.0, alias="lambda", gt=0)
    T: int = Field(15, ge=2)
    gamma: float = Field(DEFAULT_GAMMA, gt=0)
    p: float = Field(0.3, gt=0)
    lr_max: float = Field(3e-5, gt=0)
    warmup_steps: int = Field(5000, ge=0)
    total_steps: int = Field(131_000, gt=0)
    batch_size: int = Field(16, gt=0)
    seed: int = 0
    beta1_opt: float = Field(0.9, ge=0, lt=1)
    beta2_opt: float = Field(0.999, ge=0, lt=1)
    f64_mode: bool = False
    grad_clip: float = Field(1.0, gt=0)
    log_every: int = Field(50, gt=0)

    @pydantic.model_validator(mode="after")
    def validate_warmup(self) -> TrainConfig:
        if self.warmup_steps >= self.total_steps:
            raise ValueError(
                f"warmup_steps ({self.warmup_steps}) must be less than "
                f"total_steps ({self.total_steps})"
            )
        return self

    def schedule_config(self) -> ScheduleConfig:
        return ScheduleConfig(T=self.T, gamma=self.gamma, p=self.p)


# ---------------------------------------------------------------------------
# Degradation
# ---------------------------------------------------------------------------

PhantomKind = Literal["smooth-field", "ellipses", "checker-lesion"]
PHANTOM_KINDS: tuple[str, ...] = ("smooth-field", "ellipses", "checker-lesion")


class PhantomSpec(BaseModel):
    """Synthetic slice description; intensities always land in [0, 1]."""

    model_config = ConfigDict(frozen=True)

    size: tuple[int, int] = (32, 32)
    kind: PhantomKind = "smooth-field"
    seed: int = 0
    # lesions are drawn at least 3 * factor pixels across
    factor: int = Field(4, gt=0)

    @pydantic.field_validator("size")
    @classmethod
    def validate_size(cls, v: tuple[int, int]) -> tuple[int, int]:
        if min(v) < 16:
            raise ValueError(f"Phantom size must be at least 16x16, got {v}")
        return v


# ---------------------------------------------------------------------------
# Experiment
# ---------------------------------------------------------------------------


class ExperimentConfig(BaseModel):
    """Desk-scale train -> sample -> evaluate -> ablate run."""

    model_config = ConfigDict(frozen=True, populate_by_name=True, extra="forbid")

    out_dir: Path = Path("runs/desk")
    seed: int = 0
    n_train: int = Field(200, gt=0)
    n_test: int = Field(40, gt=1)
    size: int = Field(32, ge=16)
    factor: int = Field(4, gt=0)
    kinds: tuple[PhantomKind, ...] = ("smooth-field", "ellipses", "checker-lesion")
    train_steps: int = Field(2000, gt=0)
    warmup_steps: int = Field(200, ge=0)
    batch_size: int = Field(16, gt=0)
    lr_max: float = Field(2e-3, gt=0)
    lam: float = Field(10.0, alias="lambda", gt=0)
    T: int = Field(15, ge=2)
    gamma: float = Field(DEFAULT_GAMMA, gt=0)
    p: float = Field(0.3, gt=0)
    sample_steps: int = Field(4, gt=0)
    selection: Literal["uniform", "geometric"] = "uniform"
    base_channels: int = Field(16, gt=0)
    depth: int = Field(2, ge=1)
    window_size: int = Field(4, gt=0)
    heads: int = Field(4, gt=0)
    time_embed_dim: int = Field(32, gt=0)
    variants: tuple[Literal["conv", "swin"], ...] = ("conv", "swin")
    skip_train: bool = False
    log_every: int = Field(100, gt=0)
    # false records 0 seconds, so reruns give byte-identical CSVs
    timing: bool = True

    @pydantic.field_validator("kinds", "variants", mode="before")
    @classmethod
    def split_lists(cls, v: Any) -> Any:
        # flat config files carry lists as comma-separated strings
        if isinstance(v, str):
            return tuple(item.strip() for item in v.split(",") if item.strip())
        return v

    @pydantic.model_validator(mode="after")
    def validate_run(self) -> ExperimentConfig:
        if self.size % self.factor:
            raise ValueError(
                f"factor ({self.factor}) must divide phantom size ({self.size})"
            )
        if self.warmup_steps >= self.train_steps:
            raise ValueError("warmup_steps must be less than train_steps")
        if self.sample_steps > self.T:
            raise ValueError(f"sample_steps ({self.sample_steps}) exceeds T ({self.T})")
        return self

    def net_config(self, variant: str) -> NetConfig:
        return NetConfig(
            base_channels=self.base_channels,
            depth=self.depth,
            use_window_attention=VARIANTS[variant],
            window_size=self.window_size,
            heads=self.heads,
            time_embed_dim=self.time_embed_dim,
        )

    def train_config(self, variant: str) -> TrainConfig:
        return TrainConfig(
            lam=self.lam,
            T=self.T,
            gamma=self.gamma,
            p=self.p,
            lr_max=self.lr_max,
            warmup_steps=self.warmup_steps,
            total_steps=self.train_steps,
            batch_size=self.batch_size,
            seed=self.seed,
            log_every=self.log_every,
        )

    def schedule_config(self) -> ScheduleConfig:
        return ScheduleConfig(T=self.T, gamma=self.gamma, p=self.p)
