"""Mosaic obfuscation and hint compositing.

Mosaicing replaces each m x m patch by its mean and upscales back to the
original dims; the hint image keeps the original pixels outside the
saliency mask and the mosaic inside it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import Image, avg_pool, upscale_nearest
from .saliency import SaliencyMask

ALLOWED_SCALES = (2, 4, 8, 16, 32, 64)


@dataclass(frozen=True)
class MosaicScale:
    """Mosaic patch side length; a power of two in [2, 64]."""

    value: int

    def __post_init__(self):
        if self.value not in ALLOWED_SCALES:
            raise ValueError(f"mosaic scale must be one of {ALLOWED_SCALES}, got {self.value}")


def _scale_value(m) -> int:
    if isinstance(m, MosaicScale):
        return m.value
    return MosaicScale(int(m)).value


def mosaic(img: Image, m) -> Image:
    """Average-pool m x m patches per channel, then nearest-upscale back."""
    mv = _scale_value(m)
    pooled = avg_pool(img, mv)
    return upscale_nearest(pooled, img.height, img.width)


def compose_hint(img: Image, m, mask: SaliencyMask) -> Image:
    """Composite the mosaic hint into masked pixels: M(I) inside, I outside."""
    if (mask.height, mask.width) != (img.height, img.width):
        raise ValueError(
            f"mask dims {mask.height}x{mask.width} do not match image {img.height}x{img.width}"
        )
    mos = mosaic(img, m)
    s = mask.bits[:, :, None].astype(img.data.dtype)
    return Image(mos.data * s + img.data * (1 - s))
