"""Tests for the encoder-decoder denoiser and windowed attention."""

import numpy as np
import pytest
import torch

from rsrdiff.errors import ShapeMismatchError
from rsrdiff.models import NetConfig
from rsrdiff.services.denoiser import (
    NetDenoiser,
    WindowAttention,
    denoiser_forward,
    init_params,
    merge_windows,
    partition_windows,
    time_embedding,
)
from tests.conftest import tiny_net


class TestTimeEmbedding:
    def test_values_at_zero(self):
        """t=0 embeds to sin=0, cos=1."""
        emb = time_embedding(torch.tensor([0.0]), 8)
        torch.testing.assert_close(emb[0, :4], torch.zeros(4))
        torch.testing.assert_close(emb[0, 4:], torch.ones(4))

    def test_first_frequency_at_one(self):
        """t=1, dim=4: the i=0 sine term is sin(1)."""
        emb = time_embedding(torch.tensor([1.0], dtype=torch.float64), 4)
        assert emb[0, 0].item() == pytest.approx(0.84147, abs=1e-5)
        assert torch.all(emb.abs() <= 1.0)

    def test_distinct_steps(self):
        emb = time_embedding(torch.arange(1, 16, dtype=torch.float64), 16)
        assert emb.shape == (15, 16)
        assert torch.unique(emb, dim=0).shape[0] == 15

    def test_odd_dimension(self):
        with pytest.raises(ValueError, match="even"):
            time_embedding(1, 7)


class TestWindowAttention:
    """Test windowed self-attention."""

    def test_partition_roundtrip(self):
        x = torch.arange(2 * 3 * 4 * 6, dtype=torch.float64).reshape(2, 3, 4, 6)
        windows = partition_windows(x, 2)
        assert windows.shape == (2 * 2 * 3, 4, 3)
        torch.testing.assert_close(merge_windows(windows, 2, 2, 4, 6), x)

    def test_shape_preserved_and_rows_normalised(self):
        block = WindowAttention(channels=8, heads=2, window_size=2).double()
        x = torch.randn(1, 8, 4, 6, dtype=torch.float64)
        out, weights = block(x, return_weights=True)
        assert out.shape == x.shape
        assert weights.shape == (6, 2, 4, 4)
        torch.testing.assert_close(
            weights.sum(dim=-1), torch.ones(6, 2, 4, dtype=torch.float64)
        )

    def test_equal_keys_average_values(self):
        """Constant logits give uniform weights and the per-window mean of V."""
        c = 4
        block = WindowAttention(channels=c, heads=1, window_size=2).double()
        with torch.no_grad():
            block.qkv.weight.zero_()
            block.qkv.bias.zero_()
            # queries and keys vanish, values and projection copy the input
            block.qkv.weight[2 * c :].copy_(torch.eye(c))
            block.proj.weight.copy_(torch.eye(c))
            block.proj.bias.zero_()
        x = torch.randn(1, c, 4, 4, dtype=torch.float64)
        out, weights = block(x, return_weights=True)
        torch.testing.assert_close(weights, torch.full_like(weights, 0.25))
        window_means = torch.nn.functional.avg_pool2d(x, 2)
        expected = torch.repeat_interleave(
            torch.repeat_interleave(window_means, 2, dim=-2), 2, dim=-1
        )
        torch.testing.assert_close(out - x, expected)

    def test_zero_input_zero_bias(self):
        block = WindowAttention(channels=8, heads=2, window_size=2)
        with torch.no_grad():
            block.qkv.bias.zero_()
            block.proj.bias.zero_()
        x = torch.zeros(2, 8, 4, 4)
        assert torch.count_nonzero(block(x)) == 0

    def test_window_larger_than_map(self):
        """The window shrinks to the map; odd maps are padded and cropped back."""
        block = WindowAttention(channels=4, heads=1, window_size=8)
        assert block.effective_window(3, 5) == 3
        out = block(torch.randn(2, 4, 3, 5))
        assert out.shape == (2, 4, 3, 5)

    def test_tokens_do_not_cross_windows(self):
        """Changing one window leaves the other windows' outputs untouched."""
        block = WindowAttention(channels=4, heads=2, window_size=2).double()
        x = torch.randn(1, 4, 4, 4, dtype=torch.float64)
        y = x.clone()
        y[..., :2, :2] += 1.0
        with torch.no_grad():
            out_x, out_y = block(x), block(y)
        torch.testing.assert_close(out_x[..., 2:, :], out_y[..., 2:, :])
        torch.testing.assert_close(out_x[..., :2, 2:], out_y[..., :2, 2:])

    def test_heads_must_divide_channels(self):
        with pytest.raises(ValueError):
            WindowAttention(channels=6, heads=4, window_size=2)


class TestDenoiserNet:
    """Test the full network."""

    @pytest.mark.parametrize("shape", [(8, 8), (9, 11), (16, 10)])
    def test_output_shape(self, net_config, shape):
        model = init_params(net_config, seed=0)
        x = torch.randn(2, 1, *shape)
        out = denoiser_forward(model, x, x, torch.tensor([3, 15]))
        assert out.shape == (2, 1, *shape)

    def test_too_small(self, net_config):
        model = init_params(net_config, seed=0)
        x = torch.zeros(1, 1, 4, 4)
        with pytest.raises(ShapeMismatchError, match="smaller"):
            model(x, x, 1)

    def test_input_mismatch(self, net_config):
        model = init_params(net_config, seed=0)
        with pytest.raises(ShapeMismatchError):
            model(torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 8, 9), 1)

    def test_init_is_seeded(self, net_config):
        a = init_params(net_config, seed=42)
        b = init_params(net_config, seed=42)
        c = init_params(net_config, seed=43)
        for (name, pa), pb, pc in zip(
            a.named_parameters(), b.parameters(), c.parameters(), strict=True
        ):
            torch.testing.assert_close(pa, pb)
            if not name.endswith("bias"):
                assert not torch.equal(pa, pc)

    def test_biases_zero_and_weights_bounded(self):
        model = init_params(tiny_net(), seed=0)
        for name, param in model.named_parameters():
            if name.endswith("bias"):
                assert torch.count_nonzero(param) == 0
            else:
                bound = (1.0 / param[0].numel()) ** 0.5
                assert param.abs().max() <= bound * (1 + 1e-6)

    def test_weight_spread_matches_fan_in(self):
        """Large layers have std within 20% of sqrt(1/fan_in) / sqrt(3)."""
        model = init_params(NetConfig(), seed=0)
        checked = 0
        for name, param in model.named_parameters():
            if name.endswith("bias") or param.numel() < 4096:
                continue
            expected = (1.0 / param[0].numel()) ** 0.5 / 3**0.5
            assert param.std().item() == pytest.approx(expected, rel=0.2), name
            checked += 1
        assert checked > 0

    def test_variants_share_initial_weights(self):
        """Both variants start from identical shared parameters under one seed."""
        conv = dict(init_params(tiny_net("conv"), seed=5).named_parameters())
        swin = dict(init_params(tiny_net("swin"), seed=5).named_parameters())
        assert conv.keys() == swin.keys()
        for name in conv:
            torch.testing.assert_close(conv[name], swin[name])

    def test_conv_variant_ignores_attention(self):
        """Perturbing attention weights changes only the swin variant's output."""
        x = torch.randn(1, 1, 8, 8)
        for variant, should_change in (("conv", False), ("swin", True)):
            model = init_params(tiny_net(variant), seed=1)
            before = model(x, x, 4)
            with torch.no_grad():
                model.attention.proj.weight.add_(0.5)
            after = model(x, x, 4)
            assert (not torch.equal(before, after)) is should_change
            names = [name for name, _ in model.active_parameters()]
            assert any(n.startswith("attention.") for n in names) is should_change

    def test_numpy_adapter(self):
        model = init_params(tiny_net(), seed=0)
        adapter = NetDenoiser(model)
        x = np.random.default_rng(0).uniform(size=(8, 8))
        out = adapter(x, x, 5)
        assert out.shape == (8, 8)
        assert out.dtype == np.float64
