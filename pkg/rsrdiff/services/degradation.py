"""Synthetic HR/LR pairs: phantoms, block-average downsampling and nearest
pre-upsampling back onto the HR grid."""

from __future__ import annotations

import logging

import numpy as np
import numpy.typing as npt
from scipy import ndimage
from skimage.measure import block_reduce

from rsrdiff.errors import ShapeMismatchError
from rsrdiff.models import PhantomSpec
from rsrdiff.services.diffusion import ImagePair, as_image

logger = logging.getLogger(__name__)

Factor = int | tuple[int, int]


def _factors(factor: Factor) -> tuple[int, int]:
    fh, fw = (factor, factor) if isinstance(factor, int) else factor
    if fh < 1 or fw < 1:
        raise ValueError(f"Scale factors must be positive, got {factor}")
    return int(fh), int(fw)


def _block(img: np.ndarray, fh: int, fw: int) -> tuple[int, ...]:
    return (1, fh, fw) if img.ndim == 3 else (fh, fw)


def downsample(img: npt.ArrayLike, factor: Factor) -> np.ndarray:
    """Mean over non-overlapping fh x fw blocks.

    Block averaging stands in for a scanner's resampler: it is exactly
    defined and keeps the image mean.
    """
    img = as_image(img)
    fh, fw = _factors(factor)
    h, w = img.shape[-2:]
    if h % fh or w % fw:
        raise ShapeMismatchError(
            f"downsample factor ({fh}, {fw}) must divide the image", (h, w), (fh, fw)
        )
    return block_reduce(img, _block(img, fh, fw), np.mean)


def upsample_nearest(img: npt.ArrayLike, factor: Factor) -> np.ndarray:
    img = as_image(img)
    fh, fw = _factors(factor)
    return np.repeat(np.repeat(img, fh, axis=-2), fw, axis=-1)


# ---------------------------------------------------------------------------
# Phantoms
# ---------------------------------------------------------------------------


def _normalise(field: np.ndarray) -> np.ndarray:
    lo, hi = field.min(), field.max()
    if hi - lo < 1e-12:
        return np.full_like(field, 0.5)
    return (field - lo) / (hi - lo)


def _smooth_field(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    sigma = max(shape) / 8.0
    noise = rng.standard_normal(shape)
    return _normalise(ndimage.gaussian_filter(noise, sigma, mode="wrap"))


def _ellipses(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros(shape)
    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w
        ry, rx = rng.uniform(0.1, 0.35) * h, rng.uniform(0.1, 0.35) * w
        theta = rng.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        inside = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
        img[inside] += rng.uniform(0.15, 0.45)
    return img


def _disc(shape: tuple[int, int], cy: float, cx: float, radius: float) -> np.ndarray:
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2


def _checker_lesion(
    shape: tuple[int, int], factor: int, rng: np.random.Generator
) -> np.ndarray:
    img = 0.2 + 0.5 * _smooth_field(shape, rng)
    h, w = shape
    # lesion diameter at least 3 * factor so it spans several LR blocks
    radius = 1.5 * factor
    radius = min(radius, (min(h, w) - 1) / 2.0)
    for index in range(rng.integers(1, 4)):
        r = radius if index == 0 else radius * rng.uniform(0.5, 1.0)
        cy = rng.uniform(r, h - 1 - r)
        cx = rng.uniform(r, w - 1 - r)
        img[_disc(shape, cy, cx, r)] = rng.choice([0.0, 1.0])
    return img


def gen_phantom(spec: PhantomSpec) -> np.ndarray:
    """Deterministic synthetic slice in [0, 1] for the given spec and seed."""
    rng = np.random.default_rng(spec.seed)
    shape = tuple(spec.size)
    if spec.kind == "smooth-field":
        img = _smooth_field(shape, rng)
    elif spec.kind == "ellipses":
        img = _ellipses(shape, rng)
    else:
        img = _checker_lesion(shape, spec.factor, rng)
    return np.clip(img, 0.0, 1.0)


def make_pair(hr: npt.ArrayLike, factor: Factor) -> ImagePair:
    """LR = upsample_nearest(downsample(hr)) on the same grid as hr."""
    hr = as_image(hr, "hr")
    lr = upsample_nearest(downsample(hr, factor), factor)
    return ImagePair.from_images(hr, lr)


def phantom_corpus(
    n: int, size: int, factor: int, kinds: tuple[str, ...], seed: int
) -> list[tuple[str, ImagePair]]:
    """``n`` phantoms cycling through ``kinds``; seeds derive from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(n, dtype=np.uint32)
    corpus = []
    for index in range(n):
        kind = kinds[index % len(kinds)]
        spec = PhantomSpec(
            size=(size, size), kind=kind, seed=int(seeds[index]), factor=factor
        )
        corpus.append((f"{kind}-{index:04d}", make_pair(gen_phantom(spec), factor)))
    logger.debug(f"Generated {n} phantoms of size {size} (seed={seed})")
    return corpus
