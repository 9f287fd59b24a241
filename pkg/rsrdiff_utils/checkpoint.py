"""Denoiser checkpoints.

Layout (little-endian)::

    b"RSDC" | version u32 | config length u32 | {"net": ..., "schedule": ...} JSON
    tensor count u32
    per tensor: name length u16 | name | dtype u8 | ndim u8 | dims u32... | payload
    blake2b-64 of every preceding byte
"""

from __future__ import annotations

import hashlib
import logging
import struct
from pathlib import Path

import numpy as np
import orjson
import torch

from rsrdiff.errors import ChecksumError, ConfigMismatchError, CorruptFileError
from rsrdiff.models import NetConfig, ScheduleConfig
from rsrdiff.services.denoiser import DenoiserNet

logger = logging.getLogger(__name__)

MAGIC = b"RSDC"
VERSION = 2
CHECKSUM_BYTES = 8
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
TORCH_DTYPES = {0: torch.float32, 1: torch.float64}

ParamSet = dict[str, torch.Tensor]


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=CHECKSUM_BYTES).digest()


def encode_checkpoint(
    params: ParamSet, config: NetConfig, schedule: ScheduleConfig | None = None
) -> bytes:
    schedule = schedule or ScheduleConfig()
    config_bytes = orjson.dumps(
        {"net": config.model_dump(), "schedule": schedule.model_dump()}
    )
    parts = [
        MAGIC,
        struct.pack("<II", VERSION, len(config_bytes)),
        config_bytes,
        struct.pack("<I", len(params)),
    ]
    for name, tensor in params.items():
        arr = tensor.detach().cpu().numpy()
        code = 0 if arr.dtype == np.float32 else 1
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=DTYPE_CODES[code]).tobytes())
    body = b"".join(parts)
    return body + _checksum(body)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptFileError("Checkpoint ends in the middle of a record")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(raw: bytes) -> tuple[ParamSet, NetConfig, ScheduleConfig]:
    if len(raw) < len(MAGIC) + CHECKSUM_BYTES or not raw.startswith(MAGIC):
        raise CorruptFileError("Not a denoiser checkpoint")
    body, stored = raw[:-CHECKSUM_BYTES], raw[-CHECKSUM_BYTES:]
    if _checksum(body) != stored:
        raise ChecksumError("Checkpoint checksum mismatch; refusing to load")

    reader = _Reader(body)
    reader.take(len(MAGIC))
    version, config_len = reader.unpack("<II")
    if version != VERSION:
        raise CorruptFileError(f"Unsupported checkpoint version {version}")
    try:
        header = orjson.loads(reader.take(config_len))
        config = NetConfig.model_validate(header["net"])
        schedule = ScheduleConfig.model_validate(header["schedule"])
    except (orjson.JSONDecodeError, KeyError, TypeError) as e:
        raise CorruptFileError(f"Malformed checkpoint config: {e}") from e

    (count,) = reader.unpack("<I")
    params: ParamSet = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        if name in params:
            raise CorruptFileError(f"Duplicate tensor name '{name}'")
        code, ndim = reader.unpack("<BB")
        if code not in DTYPE_CODES:
            raise CorruptFileError(f"Unknown dtype code {code} for '{name}'")
        dims = reader.unpack(f"<{ndim}I")
        dtype = DTYPE_CODES[code]
        size = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        arr = np.frombuffer(reader.take(size), dtype=dtype).reshape(dims)
        params[name] = torch.from_numpy(arr.astype(dtype.newbyteorder("="))).to(
            TORCH_DTYPES[code]
        )
    if reader.pos != len(body):
        raise CorruptFileError("Unexpected bytes after the last tensor")
    return params, config, schedule


def save_checkpoint(
    path: Path | str, model: DenoiserNet, schedule: ScheduleConfig | None = None
) -> None:
    """Write every registered parameter of ``model`` with its config.

    ``schedule`` is the shifting schedule the model was trained on; samplers
    rebuild it from the checkpoint. Defaults to ``ScheduleConfig()``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = {name: p for name, p in model.named_parameters()}
    path.write_bytes(encode_checkpoint(params, model.config, schedule))
    logger.info(f"Saved {model.config.variant} checkpoint to {path}")


def load_checkpoint(
    path: Path | str,
) -> tuple[ParamSet, NetConfig, ScheduleConfig]:
    return decode_checkpoint(Path(path).read_bytes())


def load_schedule(path: Path | str) -> ScheduleConfig:
    """The training schedule stored alongside the weights."""
    return load_checkpoint(path)[2]


def load_model(path: Path | str, variant: str | None = None) -> DenoiserNet:
    """Rebuild a denoiser; ``variant`` must match the stored one when given."""
    params, config, _ = load_checkpoint(path)
    if variant is not None and variant != config.variant:
        raise ConfigMismatchError(expected=variant, found=config.variant)
    dtype = next(iter(params.values())).dtype if params else torch.float32
    model = DenoiserNet(config).to(dtype)
    mismatched = set(dict(model.named_parameters())) ^ set(params)
    if mismatched:
        raise CorruptFileError(
            f"Checkpoint tensors do not match the network: {sorted(mismatched)}"
        )
    model.load_state_dict(params, strict=True)
    return model.eval()
