"""Tests for tensor files, checkpoints, config files and PGM export."""

import hashlib
from pathlib import Path

import numpy as np
import pydantic
import pytest
import torch
from PIL import Image

from rsrdiff.errors import (
    ChecksumError,
    ConfigFileError,
    ConfigMismatchError,
    CorruptFileError,
)
from rsrdiff.models import ExperimentConfig, ScheduleConfig, TrainConfig
from rsrdiff.services.denoiser import init_params
from rsrdiff_utils import (
    load_checkpoint,
    load_model,
    load_schedule,
    parse_config_file,
    parse_config_text,
    read_tensor,
    save_checkpoint,
    write_pgm,
    write_tensor,
)
from rsrdiff_utils.checkpoint import VERSION, decode_checkpoint, encode_checkpoint
from rsrdiff_utils.pgm import encode_pgm
from rsrdiff_utils.tensor_io import decode_tensor, encode_tensor
from tests.conftest import tiny_net

CONFIG_DIR = Path(__file__).parent.parent / "configs"


class TestTensorFile:
    def test_header_layout(self):
        raw = encode_tensor(np.zeros((2, 3), dtype=np.float32))
        assert raw.startswith(b"RSD1 f32 2 2 3\n")
        assert len(raw) == len(b"RSD1 f32 2 2 3\n") + 24

    def test_roundtrip_keeps_dtype(self, tmp_path, rng):
        for dtype in (np.float32, np.float64):
            data = rng.normal(size=(3, 4, 5)).astype(dtype)
            path = tmp_path / f"t-{np.dtype(dtype).name}.rsd"
            write_tensor(path, data)
            back = read_tensor(path)
            assert back.dtype == dtype
            np.testing.assert_array_equal(back, data)

    def test_integers_are_promoted(self):
        assert decode_tensor(encode_tensor([[1, 2], [3, 4]])).dtype == np.float64

    @pytest.mark.parametrize(
        "raw,match",
        [
            (b"no newline at all", "header"),
            (b"RSD2 f64 1 1\n" + bytes(8), "Not a tensor"),
            (b"RSD1 f16 1 1\n" + bytes(2), "dtype"),
            (b"RSD1 f64 2 1\n", "dims"),
            (b"RSD1 f64 1 x\n", "Non-integer"),
            (b"RSD1 f64 1 -1\n", "Negative"),
            (b"RSD1 f64 3 1048576 1048576 1048576\n", "overflow"),
            (b"RSD1 f64 1 4\n" + bytes(16), "Truncated"),
            (b"RSD1 f64 1 1\n" + bytes(9), "trailing"),
        ],
    )
    def test_corrupt(self, raw, match):
        with pytest.raises(CorruptFileError, match=match):
            decode_tensor(raw)


class TestCheckpoint:
    """Test checkpoint save/load and integrity checks."""

    def test_roundtrip(self, net_config, tmp_path):
        model = init_params(net_config, seed=9)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        params, config, schedule = load_checkpoint(path)
        assert config == net_config
        assert schedule == ScheduleConfig()
        for name, param in model.named_parameters():
            torch.testing.assert_close(params[name], param.detach())

        restored = load_model(path, variant=net_config.variant)
        x = torch.rand(1, 1, 8, 8)
        torch.testing.assert_close(restored(x, x, 3), model.eval()(x, x, 3))

    def test_schedule_roundtrip(self, tmp_path):
        model = init_params(tiny_net(), seed=2)
        schedule = ScheduleConfig(T=8, gamma=1.0, p=0.8)
        save_checkpoint(tmp_path / "m.ckpt", model, schedule)
        assert load_schedule(tmp_path / "m.ckpt") == schedule

    def test_old_version_rejected(self):
        model = init_params(tiny_net(), seed=0)
        raw = bytearray(encode_checkpoint(dict(model.named_parameters()), model.config))
        raw[4:8] = (VERSION - 1).to_bytes(4, "little")
        body = bytes(raw[:-8])
        raw[-8:] = hashlib.blake2b(body, digest_size=8).digest()
        with pytest.raises(CorruptFileError, match="version"):
            decode_checkpoint(bytes(raw))

    def test_float64_weights(self, tmp_path):
        model = init_params(tiny_net(), seed=1, dtype=torch.float64)
        save_checkpoint(tmp_path / "m.ckpt", model)
        restored = load_model(tmp_path / "m.ckpt")
        assert next(restored.parameters()).dtype == torch.float64

    def test_flipped_byte(self):
        model = init_params(tiny_net(), seed=0)
        params = dict(model.named_parameters())
        raw = bytearray(encode_checkpoint(params, model.config))
        raw[len(raw) // 2] ^= 0xFF
        with pytest.raises(ChecksumError, match="refusing"):
            decode_checkpoint(bytes(raw))

    def test_not_a_checkpoint(self):
        with pytest.raises(CorruptFileError):
            decode_checkpoint(b"RSD1 f64 1 1\n" + bytes(8))

    def test_variant_mismatch(self, tmp_path):
        save_checkpoint(tmp_path / "conv.ckpt", init_params(tiny_net("conv"), seed=0))
        with pytest.raises(ConfigMismatchError, match="'conv' variant"):
            load_model(tmp_path / "conv.ckpt", variant="swin")

    def test_missing_tensor(self, tmp_path):
        model = init_params(tiny_net(), seed=0)
        params = dict(model.named_parameters())
        params.pop(next(iter(params)))
        path = tmp_path / "partial.ckpt"
        path.write_bytes(encode_checkpoint(params, model.config))
        with pytest.raises(CorruptFileError, match="do not match"):
            load_model(path)


class TestConfigFile:
    def test_parse(self):
        text = """
        # schedule
        T = 15
        warmup-steps = 2   # inline
        lambda = 10
        """
        assert parse_config_text(text) == {
            "T": "15",
            "warmup_steps": "2",
            "lambda": "10",
        }

    @pytest.mark.parametrize(
        "text,match",
        [("seed = 1\nseed = 2", "duplicate"), ("seed 1", "expected"), ("= 3", "key")],
    )
    def test_errors(self, text, match):
        with pytest.raises(ConfigFileError, match=match):
            parse_config_text(text)

    def test_validates_against_model(self, tmp_path):
        path = tmp_path / "train.conf"
        path.write_text("lambda = 2.5\ntotal_steps = 10\nwarmup_steps = 2\n")
        config = parse_config_file(path, TrainConfig)
        assert (config.lam, config.total_steps) == (2.5, 10)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.conf"
        path.write_text("n_train = 4\nbogus = 1\n")
        with pytest.raises(pydantic.ValidationError):
            parse_config_file(path, ExperimentConfig)

    @pytest.mark.parametrize("name", ["smoke.conf", "desk.conf"])
    def test_shipped_experiment_configs(self, name):
        config = parse_config_file(CONFIG_DIR / name, ExperimentConfig)
        assert config.variants == ("conv", "swin")

    def test_shipped_train_config(self):
        config = parse_config_file(CONFIG_DIR / "train.conf", TrainConfig)
        assert config.warmup_steps == 5000


class TestPGM:
    def test_header_and_scaling(self):
        raw = encode_pgm(np.array([[0.0, 0.5], [1.0, 2.0]]), lo=0.0, hi=1.0)
        header = b"P5\n2 2\n65535\n"
        assert raw.startswith(header)
        pixels = np.frombuffer(raw[len(header) :], dtype=">u2")
        np.testing.assert_array_equal(pixels, [0, 32768, 65535, 65535])

    def test_flat_image(self, tmp_path):
        write_pgm(tmp_path / "flat.pgm", np.full((3, 4), 0.2))
        raw = (tmp_path / "flat.pgm").read_bytes()
        assert raw.startswith(b"P5\n4 3\n")

    def test_reads_back_with_pillow(self, tmp_path, rng):
        img = rng.uniform(size=(5, 7))
        path = tmp_path / "figures" / "slice.pgm"
        write_pgm(path, img, 0.0, 1.0)
        with Image.open(path) as opened:
            assert opened.format == "PPM"
            assert opened.size == (7, 5)
            pixels = np.asarray(opened)
        np.testing.assert_array_equal(pixels, np.rint(img * 65535))

    def test_rejects_volume(self):
        with pytest.raises(ValueError):
            encode_pgm(np.zeros((2, 3, 3)))

