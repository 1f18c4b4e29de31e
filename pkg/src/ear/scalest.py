"""Mosaic-scale estimation from the principal-curvature edge response.

Per-pixel edge response r = Tr(H)^2 / Det(H) of the image Hessian (valid
only where Det > 0), summarized as r10 = mean of the top 10% of valid
responses inside the saliency region, regressed linearly against the
grid-searched optimal scale, and quantized to the nearest power of two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .imagecore import GrayImage, Image, gaussian_blur, second_derivatives, to_gray
from .obfuscate import ALLOWED_SCALES, MosaicScale
from .saliency import SaliencyMask

CATEGORIES = ("objects", "textures")


class NoSignalError(ValueError):
    """Raised when no valid edge-response pixel exists in the selection."""


@dataclass(frozen=True)
class EdgeResponseField:
    """Per-pixel edge response r with a validity bit (1 iff Det(H) > 0)."""

    r: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if self.r.shape != self.valid.shape or self.r.ndim != 2:
            raise ValueError("r and valid must be matching 2-D fields")
        if not np.isfinite(self.r[self.valid == 1]).all():
            raise ValueError("edge response must be finite where valid")


@dataclass(frozen=True)
class ScaleModel:
    """Linear estimator m_hat = slope * r10 + intercept for one category."""

    slope: float
    intercept: float
    category: str = "objects"

    def __post_init__(self):
        if not (math.isfinite(self.slope) and math.isfinite(self.intercept)):
            raise ValueError("scale model coefficients must be finite")
        if self.category not in CATEGORIES:
            raise ValueError(f"category must be one of {CATEGORIES}, got {self.category!r}")


def edge_response(img: GrayImage, presmooth_sigma: float = 1.0) -> EdgeResponseField:
    """Edge response r = (Dxx+Dyy)^2 / (Dxx*Dyy - Dxy^2) where Det > 0.

    Optional Gaussian pre-smoothing tames pixel noise before the second
    differences; sigma = 0 evaluates the raw Hessian (for analytic tests).
    Non-positive or vanishing determinants are flagged invalid, as are the
    rare ratios that overflow.
    """
    if img.height < 3 or img.width < 3:
        raise ValueError(f"need at least 3x3 for edge response, got {img.height}x{img.width}")
    smoothed = gaussian_blur(img, presmooth_sigma) if presmooth_sigma > 0 else img
    dxx, dyy, dxy = second_derivatives(GrayImage(smoothed.data.astype(np.float64)))
    tr = dxx.data + dyy.data
    det = dxx.data * dyy.data - dxy.data * dxy.data
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        r = (tr * tr) / det
    valid = (det > 0) & np.isfinite(r)
    r = np.where(valid, r, 0.0)
    return EdgeResponseField(r, valid.astype(np.uint8))


def r10(img: Image, mask: SaliencyMask, presmooth_sigma: float = 1.0) -> float:
    """Mean of the top 10% of valid edge responses inside the mask.

    The top slice holds ceil(0.1 * n) values for n selected pixels. Raises
    NoSignalError when the mask contains no valid edge-response pixel.
    """
    if (mask.height, mask.width) != (img.height, img.width):
        raise ValueError(
            f"mask dims {mask.height}x{mask.width} do not match image {img.height}x{img.width}"
        )
    field = edge_response(to_gray(img), presmooth_sigma)
    selected = field.r[(mask.bits == 1) & (field.valid == 1)]
    n = selected.size
    if n == 0:
        raise NoSignalError("no valid edge-response pixel inside the saliency mask")
    k = -(-n // 10)
    top = np.partition(selected, n - k)[n - k:]
    return float(top.mean())


def product_r10(pairs: Sequence[tuple], presmooth_sigma: float = 1.0) -> float:
    """Product-level r10: mean of per-image r10, skipping no-signal images."""
    if len(pairs) == 0:
        raise ValueError("need at least one (image, mask) pair")
    values = []
    for img, mask in pairs:
        try:
            values.append(r10(img, mask, presmooth_sigma))
        except NoSignalError:
            continue
    if not values:
        raise NoSignalError("every image in the product was no-signal")
    return float(np.mean(values))


def fit_scale_model(pairs: Iterable[tuple], category: str = "objects") -> ScaleModel:
    """Ordinary least squares of the optimal scale m* on r10."""
    xs = np.asarray([float(p[0]) for p in pairs], dtype=np.float64)
    ys = np.asarray([float(p[1]) for p in pairs], dtype=np.float64)
    if xs.size < 2:
        raise ValueError(f"need >= 2 (r10, m*) pairs, got {xs.size}")
    mx = xs.mean()
    sxx = float(((xs - mx) ** 2).sum())
    if sxx == 0.0:
        raise ValueError("degenerate fit: all r10 values are equal")
    my = ys.mean()
    slope = float(((xs - mx) * (ys - my)).sum() / sxx)
    intercept = float(my - slope * mx)
    return ScaleModel(slope=slope, intercept=intercept, category=category)


def estimate_scale(model: ScaleModel, r10_value: float) -> MosaicScale:
    """Quantize f(r10) to the nearest power of two in [2, 64].

    Estimates below 2 (including negative ones) floor to the smallest
    scale. Quantization is nearest in log2; exact half-way points round
    down. Results above 64 clamp to 64.
    """
    if not math.isfinite(r10_value):
        raise ValueError(f"r10 must be finite, got {r10_value}")
    v = model.slope * r10_value + model.intercept
    if v < 2.0:
        return MosaicScale(2)
    e = math.log2(v)
    lo = math.floor(e)
    exp = lo + 1 if (e - lo) > 0.5 else lo
    return MosaicScale(int(min(max(2 ** exp, 2), 64)))


def grid_search_scale(
    evaluate: Callable[[int], float],
    candidates: Sequence[int] = ALLOWED_SCALES,
) -> tuple[int, dict[int, float]]:
    """Pick the candidate scale with the highest AUROC; ties favor smaller m.

    `evaluate` maps a candidate scale to its AUROC (training included);
    evaluation failures propagate to the caller. Returns the winner and the
    full per-scale table.
    """
    table: dict[int, float] = {}
    for m in candidates:
        MosaicScale(int(m))
        table[int(m)] = float(evaluate(int(m)))
    best = sorted(table, key=lambda m: (-table[m], m))[0]
    return best, table
