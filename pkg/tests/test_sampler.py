"""Tests for few-step reverse sampling."""

import numpy as np
import pytest

from rsrdiff.errors import NonFiniteError, ShapeMismatchError
from rsrdiff.services.sampler import (
    SamplerConfig,
    init_sample,
    oracle_denoiser,
    run_sampler,
    sample_slices,
    slice_seed,
)
from rsrdiff.services.scheduler import sub_schedule


def config_for(schedule, K=4, seed=0, **kwargs):
    return SamplerConfig(
        sub=sub_schedule(schedule, K), gamma=schedule.gamma, seed=seed, **kwargs
    )


class TestOracle:
    """The oracle denoiser makes the chain collapse onto hr."""

    @pytest.mark.parametrize("K", [1, 4, 15])
    @pytest.mark.parametrize("seed", [0, 1, 12345])
    def test_recovers_hr(self, schedule, phantom_pair, K, seed):
        oracle = oracle_denoiser(phantom_pair.hr)
        out = run_sampler(phantom_pair.lr, oracle, config_for(schedule, K, seed))
        err = np.linalg.norm(out - phantom_pair.hr) / np.linalg.norm(phantom_pair.hr)
        assert err <= 1e-6


class TestSampler:
    """Test run_sampler plumbing."""

    def test_prior_is_centred_on_lr(self, schedule):
        """x_T = x_lr + gamma sqrt(beta_T) eps."""
        lr = np.full((64, 64), 0.5)
        x = init_sample(lr, schedule, np.random.default_rng(0))
        assert x.mean() == pytest.approx(0.5, abs=0.1)
        assert x.std() == pytest.approx(2.0 * np.sqrt(0.9999), rel=0.05)

    def test_deterministic_under_seed(self, schedule, phantom_pair):
        """Same seed, same output; a different seed changes it."""
        denoise = lambda x_t, x_lr, t: 0.5 * (x_t + x_lr)  # noqa: E731
        a = run_sampler(phantom_pair.lr, denoise, config_for(schedule, seed=3))
        b = run_sampler(phantom_pair.lr, denoise, config_for(schedule, seed=3))
        c = run_sampler(phantom_pair.lr, denoise, config_for(schedule, seed=4))
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_denoiser_called_at_taus(self, schedule, phantom_pair):
        """The denoiser sees tau_K first and tau_1 last."""
        seen = []

        def denoise(x_t, x_lr, t):
            seen.append(t)
            return x_lr

        run_sampler(phantom_pair.lr, denoise, config_for(schedule))
        assert seen == [15, 11, 8, 4]

    def test_stochastic_last_step(self, schedule, phantom_pair):
        """Disabling the deterministic last step only changes the final draw."""
        oracle = oracle_denoiser(phantom_pair.hr)
        config = config_for(schedule, deterministic_last_step=False)
        out = run_sampler(phantom_pair.lr, oracle, config)
        # beta_prev = 0 at the last step, so the posterior variance is still zero
        np.testing.assert_allclose(out, phantom_pair.hr, atol=1e-12)

    def test_non_finite_reports_step(self, schedule, phantom_pair):
        """A NaN from the denoiser at tau_2 is reported with k=2."""

        def denoise(x_t, x_lr, t):
            return np.full_like(x_t, np.nan) if t == 8 else x_lr

        with pytest.raises(NonFiniteError) as info:
            run_sampler(phantom_pair.lr, denoise, config_for(schedule))
        assert info.value.k == 2
        assert "k=2" in str(info.value)

    def test_wrong_output_shape(self, schedule, phantom_pair):
        with pytest.raises(ShapeMismatchError):
            run_sampler(
                phantom_pair.lr, lambda x_t, x_lr, t: x_t[:4], config_for(schedule)
            )


class TestSlices:
    """Test per-slice seeding and the worker pool."""

    def test_slice_seeds_differ(self):
        seeds = {slice_seed(0, i) for i in range(100)}
        assert len(seeds) == 100
        assert slice_seed(7, 3) == slice_seed(7, 3)

    def test_parallel_matches_serial(self, schedule, rng):
        """Results do not depend on the worker count."""
        slices = [rng.uniform(size=(16, 16)) for _ in range(6)]
        denoise = lambda x_t, x_lr, t: 0.5 * (x_t + x_lr)  # noqa: E731
        config = config_for(schedule, seed=11)
        serial = sample_slices(slices, denoise, config, workers=1)
        parallel = sample_slices(slices, denoise, config, workers=4)
        for a, b in zip(serial, parallel, strict=True):
            np.testing.assert_array_equal(a, b)

    def test_env_caps_workers(self, schedule, rng, monkeypatch):
        """RSRDIFF_THREADS is honoured; a bad value is refused."""
        slices = [rng.uniform(size=(16, 16)) for _ in range(2)]
        denoise = lambda x_t, x_lr, t: x_lr  # noqa: E731
        monkeypatch.setenv("RSRDIFF_THREADS", "1")
        assert len(sample_slices(slices, denoise, config_for(schedule))) == 2
        monkeypatch.setenv("RSRDIFF_THREADS", "0")
        with pytest.raises(RuntimeError, match="RSRDIFF_THREADS"):
            sample_slices(slices, denoise, config_for(schedule))
