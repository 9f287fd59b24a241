"""Trainable denoiser g(x_t, x_lr, t): a small encoder-decoder with an optional
windowed self-attention block at the bottleneck.

The attention block is always registered so both variants share parameter
names and initial values under one seed; ``use_window_attention`` only decides
whether it runs.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import numpy.typing as npt
import torch
import torch.nn.functional as F
from torch import nn

from rsrdiff.errors import NonFiniteError, ShapeMismatchError
from rsrdiff.models import NetConfig

logger = logging.getLogger(__name__)

ATTENTION_PREFIX = "attention."


def time_embedding(t: torch.Tensor | int, dim: int) -> torch.Tensor:
    """Sinusoidal embedding: [sin(t w_i), cos(t w_i)], w_i = 10000^(-2i/dim)."""
    if dim % 2:
        raise ValueError(f"Embedding dimension must be even, got {dim}")
    t = torch.as_tensor(t)
    dtype = t.dtype if t.is_floating_point() else torch.get_default_dtype()
    half = dim // 2
    i = torch.arange(half, dtype=torch.float64)
    freqs = torch.exp(-math.log(10000.0) * 2.0 * i / dim).to(dtype)
    angles = t.to(dtype)[..., None] * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


# ---------------------------------------------------------------------------
# Windowed attention
# ---------------------------------------------------------------------------


def partition_windows(x: torch.Tensor, window: int) -> torch.Tensor:
    """(B, C, H, W) -> (B * nW, window * window, C); H and W divisible by window."""
    b, c, h, w = x.shape
    x = x.reshape(b, c, h // window, window, w // window, window)
    x = x.permute(0, 2, 4, 3, 5, 1)
    return x.reshape(-1, window * window, c)


def merge_windows(
    windows: torch.Tensor, window: int, b: int, h: int, w: int
) -> torch.Tensor:
    """Inverse of :func:`partition_windows`."""
    c = windows.shape[-1]
    x = windows.reshape(b, h // window, w // window, window, window, c)
    x = x.permute(0, 5, 1, 3, 2, 4)
    return x.reshape(b, c, h, w)


class WindowAttention(nn.Module):
    """Multi-head self-attention inside non-overlapping square windows.

    Non-shifted: one window layer gains nothing from a cyclic shift.
    """

    def __init__(self, channels: int, heads: int, window_size: int):
        super().__init__()
        if channels % heads:
            raise ValueError(f"heads ({heads}) must divide channels ({channels})")
        self.heads = heads
        self.window_size = window_size
        self.head_dim = channels // heads
        self.scale = 1.0 / math.sqrt(self.head_dim)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.proj = nn.Linear(channels, channels)

    def effective_window(self, h: int, w: int) -> int:
        # windows larger than the map collapse to the map itself
        return max(1, min(self.window_size, h, w))

    def forward(
        self, x: torch.Tensor, return_weights: bool = False
    ) -> torch.Tensor | tuple[torch.Tensor, torch.Tensor]:
        b, c, h, w = x.shape
        window = self.effective_window(h, w)
        pad_h = (-h) % window
        pad_w = (-w) % window
        padded = x
        if pad_h or pad_w:
            padded = F.pad(x, (0, pad_w, 0, pad_h), mode="replicate")
        hp, wp = padded.shape[-2:]

        tokens = partition_windows(padded, window)
        n = tokens.shape[1]
        qkv = self.qkv(tokens).view(-1, n, 3, self.heads, self.head_dim)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)

        weights = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        attended = (weights @ v).transpose(1, 2).reshape(-1, n, c)
        out = merge_windows(self.proj(attended), window, b, hp, wp)[..., :h, :w]
        out = x + out

        if not torch.all(torch.isfinite(out)):
            raise NonFiniteError("Non-finite activations in window attention")
        if return_weights:
            return out, weights
        return out


def window_attention(
    x: torch.Tensor, block: WindowAttention
) -> torch.Tensor:
    """Apply ``block`` to a (B, C, H, W) feature map; shape is preserved."""
    return block(x)


# ---------------------------------------------------------------------------
# Encoder-decoder
# ---------------------------------------------------------------------------


class ResBlock(nn.Module):
    """conv-SiLU-(+time)-conv-SiLU with an identity or 1x1 skip."""

    def __init__(self, in_channels: int, out_channels: int, time_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.time = nn.Linear(time_dim, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = (
            nn.Conv2d(in_channels, out_channels, 1)
            if in_channels != out_channels
            else nn.Identity()
        )

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = F.silu(self.conv1(x))
        h = h + self.time(temb)[:, :, None, None]
        h = F.silu(self.conv2(h))
        return self.skip(x) + h


class DenoiserNet(nn.Module):
    """Estimate x_HR from the concatenation (x_t, x_lr) and the timestep."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        base, depth, tdim = config.base_channels, config.depth, config.time_embed_dim
        widths = [base * 2**level for level in range(depth + 1)]

        self.time_mlp = nn.Sequential(
            nn.Linear(tdim, tdim), nn.SiLU(), nn.Linear(tdim, tdim)
        )
        self.stem = nn.Conv2d(2, base, 3, padding=1)
        self.down_blocks = nn.ModuleList(
            ResBlock(widths[level], widths[level], tdim) for level in range(depth)
        )
        self.downsamplers = nn.ModuleList(
            nn.Conv2d(widths[level], widths[level + 1], 3, stride=2, padding=1)
            for level in range(depth)
        )
        self.mid = ResBlock(widths[depth], widths[depth], tdim)
        self.attention = WindowAttention(
            widths[depth], config.heads, config.window_size
        )
        self.upsamplers = nn.ModuleList(
            nn.Conv2d(widths[level + 1], widths[level], 3, padding=1)
            for level in range(depth)
        )
        self.up_blocks = nn.ModuleList(
            ResBlock(2 * widths[level], widths[level], tdim) for level in range(depth)
        )
        self.head = nn.Conv2d(base, 1, 3, padding=1)

    def active_parameters(self) -> list[tuple[str, nn.Parameter]]:
        """Parameters that influence the output for this variant."""
        return [
            (name, param)
            for name, param in self.named_parameters()
            if self.config.use_window_attention
            or not name.startswith(ATTENTION_PREFIX)
        ]

    def forward(
        self, x_t: torch.Tensor, x_lr: torch.Tensor, t: torch.Tensor | int
    ) -> torch.Tensor:
        if x_t.shape != x_lr.shape:
            raise ShapeMismatchError("denoiser inputs", x_t.shape, x_lr.shape)
        if x_t.ndim != 4 or x_t.shape[1] != 1:
            raise ShapeMismatchError(
                "denoiser input layout", x_t.shape, (-1, 1, -1, -1)
            )
        b, _, h, w = x_t.shape
        if min(h, w) < self.config.min_size:
            raise ShapeMismatchError(
                "denoiser input smaller than 4 * 2**depth",
                (h, w),
                (self.config.min_size, self.config.min_size),
            )

        t = torch.as_tensor(t, device=x_t.device).reshape(-1).expand(b)
        temb = self.time_mlp(
            time_embedding(t.to(x_t.dtype), self.config.time_embed_dim)
        )

        # reflect-pad so every downsampling halves exactly
        multiple = 2**self.config.depth
        pad_h, pad_w = (-h) % multiple, (-w) % multiple
        x = torch.cat([x_t, x_lr], dim=1)
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h), mode="reflect")

        h_feat = self.stem(x)
        skips = []
        for block, down in zip(self.down_blocks, self.downsamplers, strict=True):
            h_feat = block(h_feat, temb)
            skips.append(h_feat)
            h_feat = down(h_feat)

        h_feat = self.mid(h_feat, temb)
        if self.config.use_window_attention:
            h_feat = window_attention(h_feat, self.attention)

        for level in reversed(range(self.config.depth)):
            h_feat = F.interpolate(h_feat, scale_factor=2, mode="nearest")
            h_feat = self.upsamplers[level](h_feat)
            h_feat = torch.cat([h_feat, skips[level]], dim=1)
            h_feat = self.up_blocks[level](h_feat, temb)

        out = self.head(h_feat)[..., :h, :w]
        if not torch.all(torch.isfinite(out)):
            raise NonFiniteError("Denoiser produced non-finite output")
        return out


def init_params(
    config: NetConfig, seed: int, dtype: torch.dtype = torch.float32
) -> DenoiserNet:
    """Fan-in scaled uniform weights on +-1/sqrt(fan_in); biases start at zero."""
    model = DenoiserNet(config).to(dtype)
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, param in model.named_parameters():
            if name.endswith("bias"):
                param.zero_()
                continue
            fan_in = param[0].numel()
            bound = math.sqrt(1.0 / fan_in)
            param.uniform_(-bound, bound, generator=generator)
    logger.debug(
        f"Initialised {config.variant} denoiser with "
        f"{sum(p.numel() for p in model.parameters())} parameters (seed={seed})"
    )
    return model


def denoiser_forward(
    model: DenoiserNet,
    x_t: torch.Tensor,
    x_lr: torch.Tensor,
    t: torch.Tensor | int,
) -> torch.Tensor:
    return model(x_t, x_lr, t)


class NetDenoiser:
    """Adapter from numpy slices to a trained :class:`DenoiserNet`."""

    def __init__(self, model: DenoiserNet):
        self.model = model.eval()
        self.dtype = next(model.parameters()).dtype

    def _to_batch(self, image: npt.ArrayLike) -> torch.Tensor:
        arr = np.asarray(image)
        if arr.ndim == 3 and arr.shape[0] == 1:
            arr = arr[0]
        if arr.ndim != 2:
            raise ShapeMismatchError("denoiser slice", arr.shape, (-1, -1))
        return torch.as_tensor(arr, dtype=self.dtype)[None, None]

    def __call__(self, x_t: np.ndarray, x_lr: np.ndarray, t: int) -> np.ndarray:
        with torch.no_grad():
            out = self.model(self._to_batch(x_t), self._to_batch(x_lr), int(t))
        return out[0, 0].to(torch.float64).numpy().reshape(np.shape(x_t))
