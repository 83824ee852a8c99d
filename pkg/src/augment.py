"""
Image type and the augmentation pipeline.

resize narrow side -> random square crop -> random affine (flip, rotate, scale).
Randomness comes from a PCG64 stream derived from (config seed, per-call counter),
so a given (image, config, counter) always yields the same output.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from skimage import transform

from .exceptions import InputError
from .models import AugmentConfig

logger = logging.getLogger(__name__)

# Sampling-matrix entries closer than this to an integer are treated as exact.
SNAP_TOL = 1e-9
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Image:
    """Channel-last float image with values in [0, 1]."""
    pixels: np.ndarray

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim == 2:
            pixels = pixels[:, :, None]
        if pixels.ndim != 3 or pixels.shape[2] not in (1, 3):
            raise InputError(f"image must be [H, W, 1|3], got shape {pixels.shape}")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise InputError("image must be nonempty")
        if not np.all(np.isfinite(pixels)) or pixels.min() < 0.0 or pixels.max() > 1.0:
            raise InputError("image pixels must lie in [0, 1]")
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.pixels.shape


def _clipped(pixels: np.ndarray) -> Image:
    return Image(np.clip(pixels, 0.0, 1.0))


def rng_for(seed: int, counter: int) -> np.random.Generator:
    """Independent PCG64 stream for draw ``counter`` under ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(counter,))))


def to_grayscale(img: Image) -> Image:
    if img.channels == 1:
        return img
    return _clipped((img.pixels @ LUMA)[:, :, None])


def to_rgb(img: Image) -> Image:
    if img.channels == 3:
        return img
    return Image(np.repeat(img.pixels, 3, axis=2))


def bilinear_resize(img: Image, height: int, width: int) -> Image:
    """Bilinear resize with half-pixel centres, clamped at the borders."""
    if height < 1 or width < 1:
        raise InputError(f"resize target must be positive, got {height}x{width}")
    if (height, width) == (img.height, img.width):
        return img
    out = transform.resize(img.pixels, (height, width, img.channels), order=1, mode="edge",
                           anti_aliasing=False, preserve_range=True)
    return _clipped(out)


def resize_narrow_side(img: Image, target: int) -> Image:
    """Scale so the shorter side equals ``target``; the other side is rounded half-up."""
    if target < 1:
        raise InputError(f"target must be >= 1, got {target}")
    h, w = img.height, img.width
    if h <= w:
        new_h, new_w = target, max(1, int(np.floor(w * target / h + 0.5)))
    else:
        new_h, new_w = max(1, int(np.floor(h * target / w + 0.5))), target
    return bilinear_resize(img, new_h, new_w)


def crop(img: Image, top: int, left: int, size: int) -> Image:
    return Image(img.pixels[top:top + size, left:left + size].copy())


def draw_crop_offsets(height: int, width: int, size: int, rng: np.random.Generator) -> Tuple[int, int]:
    if height < size or width < size:
        raise InputError(f"cannot crop {size}x{size} from a {height}x{width} image; resize first")
    top = int(rng.integers(0, height - size + 1))
    left = int(rng.integers(0, width - size + 1))
    return top, left


def random_crop(img: Image, size: int, rng: np.random.Generator) -> Image:
    top, left = draw_crop_offsets(img.height, img.width, size, rng)
    return crop(img, top, left, size)


def center_crop(img: Image, size: int) -> Image:
    """Resize the narrow side to ``size`` and keep the central square."""
    resized = resize_narrow_side(img, size)
    return crop(resized, (resized.height - size) // 2, (resized.width - size) // 2, size)


@dataclass(frozen=True)
class AffineParams:
    flip: bool
    angle_deg: float
    scale: float


def draw_affine_params(cfg: AugmentConfig, rng: np.random.Generator) -> AffineParams:
    """Draw flip, angle and scale, always in that order and always all three."""
    flip = bool(rng.random() < cfg.flip_prob)
    angle = float(rng.uniform(-cfg.rotate_max_deg, cfg.rotate_max_deg))
    lo, hi = cfg.scale_range
    scale = float(rng.uniform(lo, hi))
    return AffineParams(flip=flip, angle_deg=angle, scale=scale)


def _snap(values: np.ndarray) -> np.ndarray:
    nearest = np.round(values)
    return np.where(np.abs(values - nearest) < SNAP_TOL, nearest, values)


def sampling_transform(height: int, width: int, flip: bool, angle_deg: float,
                       scale: float) -> transform.AffineTransform:
    """Map from an output (col, row) to the input position it samples.

    p -> c + F·R(-angle)·(p - c) / scale, with c the image centre and F the horizontal flip.
    """
    theta = np.deg2rad(angle_deg)
    linear = np.array([[np.cos(theta), np.sin(theta)], [-np.sin(theta), np.cos(theta)]]) / scale
    if flip:
        linear[0] = -linear[0]
    linear = _snap(linear)
    centre = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    matrix = np.eye(3)
    matrix[:2, :2] = linear
    matrix[:2, 2] = centre - linear @ centre
    return transform.AffineTransform(matrix=matrix)


def affine_resample(img: Image, flip: bool, angle_deg: float, scale: float) -> Image:
    """Flip, rotate (clockwise for positive angles) and scale about the centre.

    Bilinear sampling with zero padding outside the input.
    """
    if scale <= 0:
        raise InputError(f"scale must be positive, got {scale}")
    if not flip and angle_deg == 0.0 and scale == 1.0:
        return Image(img.pixels.copy())
    inverse_map = sampling_transform(img.height, img.width, flip, angle_deg, scale)
    out = transform.warp(img.pixels, inverse_map, order=1, mode="constant", cval=0.0, preserve_range=True)
    return _clipped(out)


def random_affine(img: Image, cfg: AugmentConfig, rng: np.random.Generator) -> Image:
    params = draw_affine_params(cfg, rng)
    logger.debug("affine flip=%s angle=%.3f scale=%.4f", params.flip, params.angle_deg, params.scale)
    return affine_resample(img, params.flip, params.angle_deg, params.scale)


def augment(img: Image, cfg: AugmentConfig, counter: int = 0) -> Image:
    """Full pipeline; output is exactly cfg.target x cfg.target."""
    rng = rng_for(cfg.seed, counter)
    resized = resize_narrow_side(img, cfg.target)
    cropped = random_crop(resized, cfg.target, rng)
    return random_affine(cropped, cfg, rng)


def preview(img: Image, cfg: AugmentConfig, counter: int = 0) -> Image:
    """Augmented copy for inspection; an identity config gives the deterministic centre crop."""
    if cfg.is_identity:
        return center_crop(img, cfg.target)
    return augment(img, cfg, counter)


class Augmenter:
    """Augmentation pipeline bound to one config."""

    def __init__(self, cfg: AugmentConfig):
        self.cfg = cfg

    def rng_for(self, counter: int) -> np.random.Generator:
        return rng_for(self.cfg.seed, counter)

    def __call__(self, img: Image, counter: int = 0) -> Image:
        return augment(img, self.cfg, counter)

    def augment_batch(self, images: Sequence[Image], counters: Optional[Sequence[int]] = None,
                      jobs: int = 1) -> List[Image]:
        """Augment each image with its own counter; results keep input order."""
        counters = list(range(len(images))) if counters is None else list(counters)
        if len(counters) != len(images):
            raise InputError(f"got {len(counters)} counters for {len(images)} images")
        if jobs <= 1:
            return [self(img, c) for img, c in zip(images, counters)]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(self, images, counters))
