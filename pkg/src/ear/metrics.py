"""Loss stack and anomaly scoring.

Covers L2, windowed SSIM, multi-scale gradient magnitude similarity
(MSGMS) as both a scalar loss and a per-pixel distance map, the convex
combination of the three, the -log(1 - L) amplification applied at
training time, max-of-map anomaly scoring, and AUROC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .imagecore import GrayImage, Image, pool2d, prewitt_gradients, to_gray, upscale2d

SSIM_WINDOW_SIGMA = 1.5


@dataclass(frozen=True)
class MetricConfig:
    """Knobs for the metric stack; defaults match the pipeline's evaluation."""

    scales: int = 3
    stabilizer: float = 0.0026
    ssim_window: int = 11
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    lamp_epsilon: float = 1e-6
    score_smooth_radius: int = 0

    def __post_init__(self):
        if self.scales < 1:
            raise ValueError(f"scales must be >= 1, got {self.scales}")
        if self.stabilizer <= 0:
            raise ValueError(f"stabilizer must be > 0, got {self.stabilizer}")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise ValueError(f"ssim window must be odd and >= 3, got {self.ssim_window}")
        if self.lamp_epsilon <= 0 or self.lamp_epsilon >= 1:
            raise ValueError(f"lamp epsilon must be in (0, 1), got {self.lamp_epsilon}")
        if self.score_smooth_radius < 0:
            raise ValueError(f"smooth radius must be >= 0, got {self.score_smooth_radius}")


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights for (L2, SSIM, MSGMS); at least one positive."""

    l2: float = 1.0
    ssim: float = 1.0
    msgms: float = 1.0

    def __post_init__(self):
        if self.l2 < 0 or self.ssim < 0 or self.msgms < 0:
            raise ValueError("loss weights must be non-negative")
        if self.l2 + self.ssim + self.msgms == 0:
            raise ValueError("loss weights must not all be zero")

    @property
    def total(self) -> float:
        return self.l2 + self.ssim + self.msgms


@dataclass(frozen=True)
class DistanceMap:
    """Per-pixel MSGMS dissimilarity in [0, 1]."""

    d: np.ndarray

    def __post_init__(self):
        if self.d.ndim != 2 or self.d.shape[0] < 1 or self.d.shape[1] < 1:
            raise ValueError(f"distance map must be non-empty (H, W), got shape {self.d.shape}")
        if not np.isfinite(self.d).all():
            raise ValueError("distance map contains non-finite values")
        if float(self.d.min()) < 0.0 or float(self.d.max()) > 1.0:
            raise ValueError("distance map values must lie in [0, 1]")


def grad_magnitude(img: GrayImage) -> GrayImage:
    """Prewitt gradient magnitude sqrt(gx^2 + gy^2), clamp-to-edge."""
    if img.height < 3 or img.width < 3:
        raise ValueError(f"need at least 3x3 for gradients, got {img.height}x{img.width}")
    gx, gy = prewitt_gradients(img.data)
    return GrayImage(np.sqrt(gx * gx + gy * gy))


def gms_map(a: GrayImage, b: GrayImage, c: float) -> GrayImage:
    """Gradient magnitude similarity (2 gA gB + c) / (gA^2 + gB^2 + c) in (0, 1]."""
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(f"dim mismatch {a.height}x{a.width} vs {b.height}x{b.width}")
    ga = grad_magnitude(a).data
    gb = grad_magnitude(b).data
    return GrayImage((2.0 * ga * gb + c) / (ga * ga + gb * gb + c))


def _check_pair(i: Image, ihat: Image) -> None:
    if (i.height, i.width, i.channels) != (ihat.height, ihat.width, ihat.channels):
        raise ValueError("image pair dims do not match")


def _msgms_mean_map(i: Image, ihat: Image, cfg: MetricConfig) -> np.ndarray:
    a = to_gray(i)
    b = to_gray(ihat)
    h, w = a.height, a.width
    for n in range(cfg.scales):
        m = 2 ** n
        if -(-h // m) < 3 or -(-w // m) < 3:
            raise ValueError(f"image {h}x{w} too small for {cfg.scales} MSGMS scales")
    acc = np.zeros((h, w), dtype=np.float64)
    for n in range(cfg.scales):
        m = 2 ** n
        am = GrayImage(pool2d(a.data, m)) if m > 1 else a
        bm = GrayImage(pool2d(b.data, m)) if m > 1 else b
        gms = gms_map(am, bm, cfg.stabilizer).data
        acc += upscale2d(gms, h, w).astype(np.float64)
    return acc / cfg.scales


def msgms_distance(i: Image, ihat: Image, cfg: MetricConfig = MetricConfig()) -> DistanceMap:
    """Per-pixel D = 1 - mean over scales of GMS, upscaled to full resolution."""
    _check_pair(i, ihat)
    d = 1.0 - _msgms_mean_map(i, ihat, cfg)
    return DistanceMap(np.clip(d, 0.0, 1.0))


def msgms_loss(i: Image, ihat: Image, cfg: MetricConfig = MetricConfig()) -> float:
    """Scalar MSGMS loss: mean of the distance map (sum over scales / N)."""
    return float(msgms_distance(i, ihat, cfg).d.mean())


def l2_loss(i: Image, ihat: Image) -> float:
    """Mean squared error; in [0, 1] for unit-range images."""
    _check_pair(i, ihat)
    diff = i.data.astype(np.float64) - ihat.data.astype(np.float64)
    return float((diff * diff).mean())


def ssim_window_taps(window: int) -> np.ndarray:
    """Normalized 1-D Gaussian taps (sigma 1.5) of the local-SSIM window."""
    half = window // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * SSIM_WINDOW_SIGMA ** 2))
    return k / k.sum()


def ssim_window_weights(window: int) -> np.ndarray:
    """Normalized 2-D Gaussian window used by local SSIM (separable)."""
    k = ssim_window_taps(window)
    return np.outer(k, k)


def _window_means(a: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Valid-mode correlation of a 2-D array with a small window."""
    k = w2.shape[0]
    h, w = a.shape
    out = np.zeros((h - k + 1, w - k + 1), dtype=np.float64)
    for di in range(k):
        for dj in range(k):
            out += w2[di, dj] * a[di:di + h - k + 1, dj:dj + w - k + 1]
    return out


def _ssim_mean_channel(a: np.ndarray, b: np.ndarray, cfg: MetricConfig) -> float:
    w2 = ssim_window_weights(cfg.ssim_window)
    c1 = cfg.ssim_k1 ** 2
    c2 = cfg.ssim_k2 ** 2
    mu_a = _window_means(a, w2)
    mu_b = _window_means(b, w2)
    var_a = _window_means(a * a, w2) - mu_a * mu_a
    var_b = _window_means(b * b, w2) - mu_b * mu_b
    cov = _window_means(a * b, w2) - mu_a * mu_b
    ssim = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(ssim.mean())


def ssim_loss(i: Image, ihat: Image, cfg: MetricConfig = MetricConfig()) -> float:
    """1 - mean local SSIM over valid windows, clamped to [0, 1]."""
    _check_pair(i, ihat)
    if i.height < cfg.ssim_window or i.width < cfg.ssim_window:
        raise ValueError(f"image {i.height}x{i.width} smaller than SSIM window {cfg.ssim_window}")
    a = i.data.astype(np.float64)
    b = ihat.data.astype(np.float64)
    vals = [_ssim_mean_channel(a[:, :, ch], b[:, :, ch], cfg) for ch in range(i.channels)]
    return float(min(max(1.0 - float(np.mean(vals)), 0.0), 1.0))


def combined_loss(
    i: Image,
    ihat: Image,
    weights: LossWeights = LossWeights(),
    cfg: MetricConfig = MetricConfig(),
) -> float:
    """Convex combination of L2, SSIM and MSGMS losses; stays in [0, 1]."""
    total = weights.total
    if total == 0:
        raise ValueError("loss weights must not all be zero")
    acc = 0.0
    if weights.l2 > 0:
        acc += weights.l2 * l2_loss(i, ihat)
    if weights.ssim > 0:
        acc += weights.ssim * ssim_loss(i, ihat, cfg)
    if weights.msgms > 0:
        acc += weights.msgms * msgms_loss(i, ihat, cfg)
    return acc / total


def lamp(lcomb: float, eps: float = 1e-6) -> float:
    """Loss amplification -log(1 - L), clamped at L = 1 - eps."""
    if lcomb < 0:
        raise ValueError(f"loss must be >= 0, got {lcomb}")
    return -math.log(1.0 - min(lcomb, 1.0 - eps))


def box_smooth(a: np.ndarray, radius: int) -> np.ndarray:
    """Box mean of side 2*radius+1, clamp-to-edge borders."""
    if radius == 0:
        return a
    size = 2 * radius + 1
    taps = np.full(size, 1.0 / size, dtype=np.float64)
    p = np.pad(a.astype(np.float64), radius, mode="edge")
    h, w = a.shape
    rows = np.zeros((h, w + 2 * radius), dtype=np.float64)
    for t in range(size):
        rows += taps[t] * p[t:t + h, :]
    out = np.zeros((h, w), dtype=np.float64)
    for t in range(size):
        out += taps[t] * rows[:, t:t + w]
    return out


def anomaly_score(dmap: DistanceMap, cfg: MetricConfig = MetricConfig()) -> float:
    """Image-level score: max of the (optionally box-smoothed) distance map."""
    return float(box_smooth(dmap.d, cfg.score_smooth_radius).max())


def auroc(normal_scores: Sequence[float], anomaly_scores: Sequence[float]) -> float:
    """Probability-of-correct-ranking AUROC with midrank tie handling.

    Equals (#pairs anomaly > normal + 0.5 * #ties) / (n * m) exactly; the
    midrank sums are integers and halves, so no rounding is introduced.
    """
    normal = np.asarray(normal_scores, dtype=np.float64)
    anomaly = np.asarray(anomaly_scores, dtype=np.float64)
    if normal.size == 0 or anomaly.size == 0:
        raise ValueError("both score lists must be non-empty")
    scores = np.concatenate([normal, anomaly])
    is_anomaly = np.concatenate([np.zeros(normal.size, bool), np.ones(anomaly.size, bool)])
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    m = anomaly.size
    u = ranks[is_anomaly].sum() - m * (m + 1) / 2.0
    return float(u / (normal.size * m))
