"""Deterministic saliency masking from attention maps.

The mask is the upper-quartile binarization of an attention map: threshold
mu + 0.674*sigma computed at attention-grid resolution, then upscaled with
nearest interpolation so the mask stays binary. A gradient-based fallback
produces an attention map when no pretrained one is available.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imagecore import GrayImage, Image, gaussian_blur, pool2d, prewitt_gradients, to_gray, upscale2d

ATTENTION_MAGIC = b"EARATTN1"
Q3_SIGMA_FACTOR = 0.674


@dataclass(frozen=True)
class AttentionMap:
    """Per-cell attention scores at grid resolution; finite and >= 0."""

    scores: np.ndarray

    def __post_init__(self):
        s = self.scores
        if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
            raise ValueError(f"attention scores must be non-empty (H, W), got shape {s.shape}")
        if not np.isfinite(s).all():
            raise ValueError("attention map contains non-finite values")
        if float(s.min()) < 0.0:
            raise ValueError("attention scores must be non-negative")

    @property
    def height(self) -> int:
        return self.scores.shape[0]

    @property
    def width(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class SaliencyMask:
    """Binary per-pixel mask at image resolution; 1 = suspected anomalous."""

    bits: np.ndarray

    def __post_init__(self):
        b = self.bits
        if b.ndim != 2:
            raise ValueError(f"mask bits must be (H, W), got shape {b.shape}")
        if b.dtype != np.uint8 or not np.isin(b, (0, 1)).all():
            raise ValueError("mask bits must be uint8 values in {0, 1}")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def complement(self) -> "SaliencyMask":
        return SaliencyMask((1 - self.bits).astype(np.uint8))


def read_attention(path) -> AttentionMap:
    """Read an EARATTN1 file: magic, u32le height, u32le width, f32le payload."""
    p = Path(path)
    raw = p.read_bytes()
    if len(raw) < 16 or raw[:8] != ATTENTION_MAGIC:
        raise ValueError(f"not an EARATTN1 file (bad magic): {p}")
    h, w = struct.unpack("<II", raw[8:16])
    if h < 1 or w < 1:
        raise ValueError(f"degenerate attention dims {h}x{w}: {p}")
    need = 16 + 4 * h * w
    if len(raw) < need:
        raise ValueError(f"truncated EARATTN1 payload (need {need} bytes, have {len(raw)}): {p}")
    if len(raw) > need:
        raise ValueError(f"trailing bytes after EARATTN1 payload: {p}")
    scores = np.frombuffer(raw, dtype="<f4", count=h * w, offset=16).reshape(h, w)
    if not np.isfinite(scores).all():
        raise ValueError(f"EARATTN1 payload contains non-finite values: {p}")
    return AttentionMap(scores.astype(np.float32))


def write_attention(attn: AttentionMap, path) -> None:
    """Write an AttentionMap in EARATTN1 format."""
    payload = attn.scores.astype("<f4").tobytes()
    Path(path).write_bytes(ATTENTION_MAGIC + struct.pack("<II", attn.height, attn.width) + payload)


def q3_threshold(scores: np.ndarray) -> float:
    """Upper-quartile threshold mu + 0.674*sigma (population sigma)."""
    s = scores.astype(np.float64)
    return float(s.mean() + Q3_SIGMA_FACTOR * s.std())


def binarize_q3(attn: AttentionMap, target_h: int, target_w: int) -> SaliencyMask:
    """Binarize at mu + 0.674*sigma and upscale to image resolution.

    Cells strictly above the threshold are 1; ties are excluded, so a
    constant map yields an all-zero mask. The threshold is computed at
    attention-grid resolution before upscaling (nearest) so interpolation
    cannot shift the statistic.
    """
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target dims must be >= 1, got {target_h}x{target_w}")
    t = q3_threshold(attn.scores)
    cells = (attn.scores.astype(np.float64) > t).astype(np.uint8)
    return SaliencyMask(upscale2d(cells, target_h, target_w))


def fallback_saliency(img: Image) -> AttentionMap:
    """Gradient-energy attention map for runs without pretrained attention.

    Blurred (sigma=2) Prewitt gradient magnitude of the gray image,
    average-pooled by 8 and min-max normalized to [0, 1]. A constant image
    maps to all zeros.
    """
    gray = to_gray(img)
    gx, gy = prewitt_gradients(gray.data)
    mag = np.sqrt(gx * gx + gy * gy)
    blurred = gaussian_blur(GrayImage(mag), 2.0)
    pooled = pool2d(blurred.data, 8)
    lo = float(pooled.min())
    hi = float(pooled.max())
    if hi <= lo:
        return AttentionMap(np.zeros_like(pooled, dtype=np.float32))
    norm = (pooled - lo) / (hi - lo)
    return AttentionMap(norm.astype(np.float32))
