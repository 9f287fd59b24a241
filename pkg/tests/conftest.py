"""Pytest configuration and fixtures for rsrdiff tests"""

# Add parent directory to path for imports
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent.parent))

from rsrdiff.models import ExperimentConfig, NetConfig, PhantomSpec, ScheduleConfig
from rsrdiff.services.degradation import gen_phantom, make_pair
from rsrdiff.services.scheduler import build_schedule

# ---------------------------------------------------------------------------
# Schedule
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def schedule():
    """Default schedule: T=15, gamma=2, p=0.3."""
    return build_schedule(ScheduleConfig())


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def phantom_pair():
    """32x32 ellipse phantom degraded by a factor of 4."""
    hr = gen_phantom(PhantomSpec(size=(32, 32), kind="ellipses", seed=3))
    return make_pair(hr, 4)


@pytest.fixture
def small_pair(rng):
    """Random 8x8 pair; residual is non-zero everywhere."""
    hr = rng.uniform(0, 1, (8, 8))
    return make_pair(hr, 2)


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------


def tiny_net(variant: str = "swin") -> NetConfig:
    """4 base channels, one level, 2x2 windows: bottleneck 8 channels / 2 heads."""
    return NetConfig(
        base_channels=4,
        depth=1,
        use_window_attention=variant == "swin",
        window_size=2,
        heads=2,
        time_embed_dim=8,
    )


@pytest.fixture(params=["conv", "swin"])
def net_config(request):
    return tiny_net(request.param)


@pytest.fixture
def f64_inputs():
    """(x_t, x_lr, hr) batches of one 8x8 slice in float64."""
    gen = torch.Generator().manual_seed(7)
    shape = (1, 1, 8, 8)
    hr = torch.rand(shape, generator=gen, dtype=torch.float64)
    x_lr = hr + 0.1 * torch.randn(shape, generator=gen, dtype=torch.float64)
    x_t = x_lr + 0.2 * torch.randn(shape, generator=gen, dtype=torch.float64)
    return x_t, x_lr, hr


# ---------------------------------------------------------------------------
# Experiment
# ---------------------------------------------------------------------------


@pytest.fixture
def smoke_experiment(tmp_path):
    """Minutes-free experiment: a handful of 16x16 phantoms, a few steps."""
    return ExperimentConfig(
        out_dir=tmp_path / "run",
        seed=5,
        n_train=8,
        n_test=4,
        size=16,
        factor=4,
        train_steps=4,
        warmup_steps=1,
        batch_size=2,
        lr_max=1e-3,
        base_channels=4,
        depth=1,
        window_size=2,
        heads=2,
        time_embed_dim=8,
    )
