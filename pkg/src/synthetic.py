"""
Desk-scale synthetic scenes and coded-aperture masks, reproducible per seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from config.schema import SCENE_KINDS

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Rect:
    """Axis-aligned patch, 0-based top-left corner, with its per-band value."""

    top: int
    left: int
    height: int
    width: int
    spectrum: tuple[float, ...]


def _check_dims(dims: tuple[int, int, int]) -> tuple[int, int, int]:
    H, W, L = (int(d) for d in dims)
    if min(H, W, L) < 1:
        raise ValueError(f"dims must be positive (H, W, L), got {dims}")
    return H, W, L


def smooth_spectrum(bands: int, center: float, width: float, amplitude: float, offset: float) -> np.ndarray:
    idx = np.arange(bands, dtype=np.float64)
    return offset + amplitude * np.exp(-0.5 * ((idx - center) / width) ** 2)


def piecewise_scene(
    dims: tuple[int, int, int],
    seed: int = 0,
    count: int = 4,
    background: float = 0.1,
) -> tuple[np.ndarray, list[Rect]]:
    """
    Constant background plus `count` rectangles with smooth spectra, painted in
    order (later ones overwrite). Rectangles stay one pixel clear of the border.
    """
    H, W, L = _check_dims(dims)
    if H < 3 or W < 3:
        raise ValueError(f"piecewise scene needs H, W >= 3, got {(H, W)}")
    rng = np.random.default_rng(seed)
    cube = np.full((L, H, W), background, dtype=np.float64)
    rects: list[Rect] = []
    for _ in range(count):
        height = int(rng.integers(1, max(2, (H - 2) // 2) + 1))
        width = int(rng.integers(1, max(2, (W - 2) // 2) + 1))
        height = min(height, H - 2)
        width = min(width, W - 2)
        top = int(rng.integers(1, H - height))
        left = int(rng.integers(1, W - width))
        spectrum = smooth_spectrum(
            L,
            center=float(rng.uniform(0, L - 1)),
            width=max(L / 3.0, 0.5),
            amplitude=float(rng.uniform(0.3, 0.8)),
            offset=float(rng.uniform(0.05, 0.2)),
        )
        cube[:, top:top + height, left:left + width] = spectrum[:, np.newaxis, np.newaxis]
        rects.append(Rect(top, left, height, width, tuple(float(v) for v in spectrum)))
    return cube, rects


def rectangle_tv(rect: Rect, background: float) -> float:
    """
    Isotropic TV of a single interior rectangle on a constant background:
    (2w + 2h - 2 + sqrt 2) |jump| per band. The bottom-right corner pixel
    carries a diagonal gradient.
    """
    perimeter = 2 * rect.width + 2 * rect.height - 2 + math.sqrt(2.0)
    return float(sum(perimeter * abs(v - background) for v in rect.spectrum))


def gaussian_blobs_scene(dims: tuple[int, int, int], seed: int = 0, count: int = 5) -> np.ndarray:
    """Sum of isotropic Gaussian blobs, each with a smooth spectrum."""
    H, W, L = _check_dims(dims)
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:H, 0:W].astype(np.float64)
    cube = np.zeros((L, H, W), dtype=np.float64)
    for _ in range(count):
        cy, cx = rng.uniform(0, H - 1), rng.uniform(0, W - 1)
        radius = rng.uniform(0.08, 0.25) * max(H, W)
        blob = np.exp(-0.5 * ((rows - cy) ** 2 + (cols - cx) ** 2) / radius ** 2)
        spectrum = smooth_spectrum(L, float(rng.uniform(0, L - 1)), max(L / 3.0, 0.5), float(rng.uniform(0.3, 0.8)), 0.0)
        cube += spectrum[:, np.newaxis, np.newaxis] * blob[np.newaxis]
    return cube


def ramp_scene(dims: tuple[int, int, int]) -> np.ndarray:
    """x[m, n, l] = n / W * l / L (1-based m, n, l): columnwise ramp, band-scaled."""
    H, W, L = _check_dims(dims)
    cols = np.arange(1, W + 1, dtype=np.float64) / W
    scale = np.arange(1, L + 1, dtype=np.float64) / L
    return scale[:, np.newaxis, np.newaxis] * np.broadcast_to(cols, (H, W))[np.newaxis]


def generate_scene(kind: str, dims: tuple[int, int, int], seed: int = 0) -> np.ndarray:
    if kind == "piecewise":
        return piecewise_scene(dims, seed)[0]
    if kind == "gaussian-blobs":
        return gaussian_blobs_scene(dims, seed)
    if kind == "ramp":
        return ramp_scene(dims)
    raise ValueError(f"unknown scene kind {kind!r}; choose from {SCENE_KINDS}")


def generate_mask(dims: tuple[int, int, int], density: float = 0.5, seed: int = 0) -> np.ndarray:
    """Binary Bernoulli(density) aperture, replicated across bands, shape (L, H, W)."""
    H, W, L = _check_dims(dims)
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    rng = np.random.default_rng(seed)
    aperture = (rng.random((H, W)) < density).astype(np.float64)
    logger.debug("mask: %d of %d pixels open", int(aperture.sum()), H * W)
    return np.repeat(aperture[np.newaxis], L, axis=0)
