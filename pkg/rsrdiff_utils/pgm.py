"""16-bit binary PGM export for eyeballing slices."""

import io
from pathlib import Path

import numpy as np
import numpy.typing as npt
from PIL import Image

MAXVAL = 65535


def to_image(
    img: npt.ArrayLike, lo: float | None = None, hi: float | None = None
) -> Image.Image:
    """Map ``img`` linearly from [lo, hi] onto a 16-bit grayscale image."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ValueError(f"PGM export needs a 2D slice, got shape {arr.shape}")
    lo = float(arr.min()) if lo is None else lo
    hi = float(arr.max()) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    scaled = np.rint(np.clip((arr - lo) / span, 0.0, 1.0) * MAXVAL)
    return Image.fromarray(scaled.astype(np.uint16))


def encode_pgm(
    img: npt.ArrayLike, lo: float | None = None, hi: float | None = None
) -> bytes:
    buffer = io.BytesIO()
    to_image(img, lo, hi).save(buffer, format="PPM")
    return buffer.getvalue()


def write_pgm(
    path: Path | str,
    img: npt.ArrayLike,
    lo: float | None = None,
    hi: float | None = None,
) -> None:
    """Write ``img`` mapped linearly from [lo, hi] (default: its own range)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    to_image(img, lo, hi).save(path, format="PPM")
