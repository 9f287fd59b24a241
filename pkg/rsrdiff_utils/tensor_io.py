"""Minimal tensor file: one ASCII header line, then a little-endian payload.

    RSD1 f32|f64 <ndim> <d0> <d1> ...\\n
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import numpy.typing as npt

from rsrdiff.errors import CorruptFileError

MAGIC = "RSD1"
DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
MAX_HEADER_BYTES = 256
MAX_ELEMENTS = 2**40


def _dtype_code(arr: np.ndarray) -> str:
    return "f32" if arr.dtype == np.float32 else "f64"


def encode_tensor(data: npt.ArrayLike) -> bytes:
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    code = _dtype_code(arr)
    header = " ".join([MAGIC, code, str(arr.ndim), *map(str, arr.shape)]) + "\n"
    payload = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes(order="C")
    return header.encode("ascii") + payload


def parse_header(raw: bytes) -> tuple[np.dtype, tuple[int, ...], int]:
    """Return (dtype, shape, payload offset) or raise CorruptFileError."""
    end = raw.find(b"\n", 0, MAX_HEADER_BYTES)
    if end < 0:
        raise CorruptFileError("Tensor header missing or longer than 256 bytes")
    try:
        tokens = raw[:end].decode("ascii").split()
    except UnicodeDecodeError as e:
        raise CorruptFileError("Tensor header is not ASCII") from e

    if len(tokens) < 3 or tokens[0] != MAGIC:
        raise CorruptFileError(f"Not a tensor file (header {tokens[:2]})")
    if tokens[1] not in DTYPES:
        raise CorruptFileError(f"Unknown tensor dtype '{tokens[1]}'")
    try:
        ndim = int(tokens[2])
        dims = tuple(int(d) for d in tokens[3:])
    except ValueError as e:
        raise CorruptFileError(f"Non-integer dimension in header: {tokens}") from e
    if ndim < 1 or len(dims) != ndim:
        raise CorruptFileError(f"Header declares {ndim} dims but lists {len(dims)}")
    if any(d < 0 for d in dims):
        raise CorruptFileError(f"Negative dimension in {dims}")

    count = 1
    for d in dims:
        count *= d
        if count > MAX_ELEMENTS:
            raise CorruptFileError(f"Dimensions {dims} overflow the element limit")
    return DTYPES[tokens[1]], dims, end + 1


def decode_tensor(raw: bytes) -> np.ndarray:
    dtype, dims, offset = parse_header(raw)
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    payload = raw[offset:]
    if len(payload) < expected:
        raise CorruptFileError(
            f"Truncated payload: {len(payload)} of {expected} bytes for {dims}"
        )
    if len(payload) > expected:
        extra = len(payload) - expected
        raise CorruptFileError(f"{extra} trailing bytes after payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def write_tensor(path: Path | str, data: npt.ArrayLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensor(data))


def read_tensor(path: Path | str) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())
