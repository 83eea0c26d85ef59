"""PNG in and out of :class:`ImageBuffer`, through Pillow."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .crop_reprojection import ImageBuffer
from .models import ConfigError

logger = logging.getLogger(__name__)


def load_png(path: Path) -> ImageBuffer:
    """Grayscale stays one channel; everything else becomes RGB."""
    path = Path(path)
    try:
        with Image.open(path) as image:
            mode = 'L' if image.mode in ('1', 'L', 'I', 'I;16', 'F') else 'RGB'
            pixels = np.asarray(image.convert(mode))
    except (OSError, UnidentifiedImageError) as exc:
        raise ConfigError(f'could not read image {path}: {exc}') from exc
    buffer = ImageBuffer(pixels)
    logger.debug('Loaded %s (%dx%d, %d channel(s))', path.name, buffer.width, buffer.height,
                 buffer.channels)
    return buffer


def save_png(buffer: ImageBuffer, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = buffer.pixels[:, :, 0] if buffer.channels == 1 else buffer.pixels
    Image.fromarray(np.ascontiguousarray(pixels)).save(path, format='PNG')
    return path
