"""
Reading and writing PGM (P5) / PPM (P6) images through Pillow.
"""
import logging
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from .augment import Image
from .exceptions import InputError

logger = logging.getLogger(__name__)

_GRAY_MODES = {"1", "L", "LA", "I", "I;16", "F"}
_NETPBM_SUFFIXES = {".pgm", ".ppm", ".pnm", ".pbm"}


def read_image(path: Union[str, Path]) -> Image:
    """Load an 8-bit image, scaling values to [0, 1] by /255."""
    try:
        with PILImage.open(path) as handle:
            mode = "L" if handle.mode in _GRAY_MODES else "RGB"
            pixels = np.asarray(handle.convert(mode), dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise FileNotFoundError(f"Image not found at {path}")
    except (UnidentifiedImageError, OSError) as exc:
        raise InputError(f"cannot decode image {path}: {exc}") from exc
    return Image(pixels)


def to_uint8(img: Image) -> np.ndarray:
    return np.clip(np.round(img.pixels * 255.0), 0, 255).astype(np.uint8)


def write_image(path: Union[str, Path], img: Image) -> None:
    """Write grayscale as P5 and RGB as P6 (other suffixes use Pillow's format detection)."""
    path = Path(path)
    data = to_uint8(img)
    pil = PILImage.fromarray(data[:, :, 0] if img.channels == 1 else data)
    fmt = "PPM" if path.suffix.lower() in _NETPBM_SUFFIXES else None
    pil.save(path, format=fmt)
    logger.debug("wrote %dx%dx%d image to %s", img.height, img.width, img.channels, path)
