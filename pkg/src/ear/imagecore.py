"""Image containers and the pixel-level primitives shared by the pipeline.

Images are float fields in [0, 1]. All filtering uses clamp-to-edge borders
and keeps the caller's dtype (float32 unless a numerical check supplies
float64).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class Image:
    """H x W x C image with C in {1, 3}; values finite and in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[2] not in (1, 3):
            raise ValueError(f"image data must be (H, W, C) with C in {{1, 3}}, got shape {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError("image must have at least one pixel")
        if not np.isfinite(d).all():
            raise ValueError("image contains non-finite values")
        if float(d.min()) < 0.0 or float(d.max()) > 1.0:
            raise ValueError("image values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class GrayImage:
    """Single-channel float field; values finite but not range-restricted."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 2:
            raise ValueError(f"gray data must be (H, W), got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("gray image contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def load_image(path) -> Image:
    """Load an 8-bit gray or RGB PNG as floats in [0, 1] (byte / 255)."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such image: {p}")
    try:
        with _PILImage.open(p) as im:
            im.load()
            mode = im.mode
            if mode not in ("L", "RGB"):
                raise ValueError(f"unsupported image mode {mode!r} (need 8-bit gray or RGB): {p}")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise ValueError(f"cannot decode image {p}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return Image((arr.astype(np.float32) / np.float32(255.0)))


def save_image(img: Image, path) -> None:
    """Write an Image as an 8-bit PNG (gray for C=1, RGB for C=3)."""
    save_png(img.data, path)


def save_png(data: np.ndarray, path) -> None:
    """Write a float array in [0, 1] (H,W) or (H,W,C) as an 8-bit PNG."""
    a = np.asarray(data, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    b = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
    _PILImage.fromarray(b).save(Path(path), format="PNG")


def to_gray(img: Image) -> GrayImage:
    """Collapse RGB to luma (0.299 R + 0.587 G + 0.114 B); identity for C=1."""
    if img.channels == 1:
        return GrayImage(img.data[:, :, 0])
    if img.channels != 3:
        raise ValueError(f"unsupported channel count {img.channels}")
    w = np.asarray(LUMA_WEIGHTS, dtype=np.float64)
    gray = img.data.astype(np.float64) @ w
    return GrayImage(gray.astype(img.data.dtype))


def pool_axis(a: np.ndarray, m: int, axis: int) -> np.ndarray:
    """Mean-pool groups of m along one axis; the last group may be partial."""
    n = a.shape[axis]
    starts = np.arange(0, n, m)
    sums = np.add.reduceat(a, starts, axis=axis)
    counts = (np.minimum(starts + m, n) - starts).astype(a.dtype)
    shape = [1] * a.ndim
    shape[axis] = len(starts)
    return sums / counts.reshape(shape)


def pool2d(a: np.ndarray, m: int, axes=(0, 1)) -> np.ndarray:
    """Mean-pool m x m patches over two axes of an array."""
    return pool_axis(pool_axis(a, m, axes[0]), m, axes[1])


def nearest_indices(src: int, dst: int) -> np.ndarray:
    """Nearest-neighbor source index per target position: floor(t*src/dst)."""
    return (np.arange(dst) * src) // dst


def upscale2d(a: np.ndarray, target_h: int, target_w: int, axes=(0, 1)) -> np.ndarray:
    """Nearest-neighbor resample over two axes of an array."""
    rows = nearest_indices(a.shape[axes[0]], target_h)
    cols = nearest_indices(a.shape[axes[1]], target_w)
    out = np.take(a, rows, axis=axes[0])
    return np.take(out, cols, axis=axes[1])


def avg_pool(img, m: int):
    """Average-pool m x m patches; output is ceil(H/m) x ceil(W/m).

    Partial patches at the right/bottom edge average over their actual
    membership, so patch means stay unbiased.
    """
    if m < 1:
        raise ValueError(f"pool size must be >= 1, got {m}")
    if isinstance(img, Image):
        return Image(np.clip(pool2d(img.data, m), 0.0, 1.0))
    if isinstance(img, GrayImage):
        return GrayImage(pool2d(img.data, m))
    raise TypeError(f"expected Image or GrayImage, got {type(img).__name__}")


def upscale_nearest(img, target_h: int, target_w: int):
    """Nearest-neighbor resample to target dims: out(y,x) = in(floor(y*h/H), floor(x*w/W))."""
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target dims must be >= 1, got {target_h}x{target_w}")
    if isinstance(img, Image):
        return Image(upscale2d(img.data, target_h, target_w))
    if isinstance(img, GrayImage):
        return GrayImage(upscale2d(img.data, target_h, target_w))
    raise TypeError(f"expected Image or GrayImage, got {type(img).__name__}")


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ceil(3*sigma)."""
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_axis(a: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    """Correlate one axis with small taps, clamp-to-edge borders."""
    radius = len(taps) // 2
    pad = [(0, 0)] * a.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(a, pad, mode="edge")
    out = np.zeros_like(a)
    n = a.shape[axis]
    sl = [slice(None)] * a.ndim
    for i, t in enumerate(taps.astype(a.dtype)):
        sl[axis] = slice(i, i + n)
        out += t * padded[tuple(sl)]
    return out


def gaussian_blur(img: GrayImage, sigma: float) -> GrayImage:
    """Separable Gaussian blur (clamp-to-edge); sigma = 0 is the identity."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img
    taps = gaussian_kernel1d(sigma)
    return GrayImage(_filter_axis(_filter_axis(img.data, taps, 0), taps, 1))


def second_derivatives(img: GrayImage):
    """Central-difference (Dxx, Dyy, Dxy), clamp-to-edge at the borders.

    Exact on quadratic surfaces at interior pixels:
      Dxx = I(y,x+1) - 2 I(y,x) + I(y,x-1)
      Dyy analogous in y
      Dxy = (I(y+1,x+1) - I(y+1,x-1) - I(y-1,x+1) + I(y-1,x-1)) / 4
    """
    if img.height < 3 or img.width < 3:
        raise ValueError(f"need at least 3x3 for second derivatives, got {img.height}x{img.width}")
    p = np.pad(img.data, 1, mode="edge")
    c = p[1:-1, 1:-1]
    dxx = p[1:-1, 2:] - 2.0 * c + p[1:-1, :-2]
    dyy = p[2:, 1:-1] - 2.0 * c + p[:-2, 1:-1]
    dxy = (p[2:, 2:] - p[2:, :-2] - p[:-2, 2:] + p[:-2, :-2]) / 4.0
    return GrayImage(dxx), GrayImage(dyy), GrayImage(dxy)


def prewitt_gradients(a: np.ndarray):
    """Prewitt 3x3 horizontal/vertical gradients (1/3-normalized), clamp-to-edge."""
    p = np.pad(a, 1, mode="edge")
    colsum = p[:-2, :] + p[1:-1, :] + p[2:, :]
    gx = (colsum[:, 2:] - colsum[:, :-2]) / np.asarray(3.0, dtype=a.dtype)
    rowsum = p[:, :-2] + p[:, 1:-1] + p[:, 2:]
    gy = (rowsum[2:, :] - rowsum[:-2, :]) / np.asarray(3.0, dtype=a.dtype)
    return gx, gy
