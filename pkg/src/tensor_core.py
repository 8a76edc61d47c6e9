"""
Dense cube arithmetic shared by every model and solver.

Storage convention: a spectral cube X with mathematical indices (m, n, l),
1 <= m <= H, 1 <= n <= W, 1 <= l <= L, is held as a float64 array of shape
(L, H, W) in C order, with X[m, n, l] at index [l-1, m-1, n-1]. Then
x.ravel() is the vectorization dim2 -> dim1 -> dim3 and x.reshape(L, H*W) the
mode-3 unfolding with bands as rows. Sheared cubes are (L, H, W + s(L-1)) and
detector planes (H, W + s(L-1)).
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray

Cube = NDArray[np.float64]
Plane = NDArray[np.float64]


def as_cube(x: ArrayLike, name: str = "cube") -> Cube:
    """Return x as a finite float64 (L, H, W) array; raise ValueError otherwise."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ValueError(f"{name} must be a non-empty (L, H, W) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_plane(y: ArrayLike, name: str = "plane") -> Plane:
    """Return y as a finite float64 2-D array; raise ValueError otherwise."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim != 2 or min(arr.shape) < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def cube_dims(x: NDArray) -> tuple[int, int, int]:
    """Mathematical dims (H, W, L) of an (L, H, W) array."""
    L, H, W = x.shape
    return H, W, L


def sheared_width(width: int, bands: int, shear_step: int) -> int:
    """Detector width W + s(L-1)."""
    return width + shear_step * (bands - 1)


def _check_shear_step(shear_step: int) -> None:
    if shear_step < 0 or int(shear_step) != shear_step:
        raise ValueError(f"shear step must be a non-negative integer, got {shear_step}")


def shear_transform(x: ArrayLike, shear_step: int) -> Cube:
    """
    f_ST: place band l at column offset s(l-1) on a zero canvas of width
    W + s(L-1). Pure placement, no arithmetic.
    """
    _check_shear_step(shear_step)
    x = np.asarray(x, dtype=np.float64)
    L, H, W = x.shape
    out = np.zeros((L, H, sheared_width(W, L, shear_step)), dtype=np.float64)
    for band in range(L):
        offset = shear_step * band
        out[band, :, offset:offset + W] = x[band]
    return out


def inverse_shear(x_sheared: ArrayLike, shear_step: int, width: int | None = None) -> Cube:
    """
    f_ST^dagger: crop columns s(l-1)+1 .. s(l-1)+W of band l. width defaults to
    the W implied by the sheared width; an explicit width must fit.
    """
    _check_shear_step(shear_step)
    xs = np.asarray(x_sheared, dtype=np.float64)
    if xs.ndim != 3:
        raise ValueError(f"sheared cube must be 3-D, got shape {xs.shape}")
    L, H, wide = xs.shape
    if width is None:
        width = wide - shear_step * (L - 1)
    if width < 1 or wide < sheared_width(width, L, shear_step):
        raise ValueError(
            f"sheared width {wide} cannot hold W={width} with L={L}, s={shear_step}"
        )
    out = np.empty((L, H, width), dtype=np.float64)
    for band in range(L):
        offset = shear_step * band
        out[band] = xs[band, :, offset:offset + width]
    return out


def safe_divide(num: ArrayLike, den: ArrayLike) -> NDArray[np.float64]:
    """Element-wise num / den, exactly 0 where den == 0."""
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    if num.shape != den.shape:
        raise ValueError(f"safe_divide shape mismatch: {num.shape} vs {den.shape}")
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den != 0)
    return out


def repeat_along_bands(y: ArrayLike, bands: int) -> Cube:
    """The L-times repeat of a plane along the band axis: (H, W') -> (L, H, W')."""
    if bands < 1:
        raise ValueError(f"band count must be >= 1, got {bands}")
    y = np.asarray(y, dtype=np.float64)
    return np.repeat(y[np.newaxis], bands, axis=0)


def band_sum(x_sheared: NDArray) -> Plane:
    """Sum over bands in increasing band order (fixed reduction order)."""
    out = np.zeros(x_sheared.shape[1:], dtype=np.float64)
    for band in range(x_sheared.shape[0]):
        out += x_sheared[band]
    return out


def inner(a: NDArray, b: NDArray) -> float:
    """Frobenius inner product."""
    return float(np.vdot(a.ravel(), b.ravel()))


def crop_repeated(y: ArrayLike, bands: int, shear_step: int, width: int) -> Cube:
    """inverse_shear(repeat_along_bands(y, L), s) without materializing the repeat."""
    _check_shear_step(shear_step)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] < sheared_width(width, bands, shear_step):
        raise ValueError(
            f"plane shape {y.shape} cannot hold W={width} with L={bands}, s={shear_step}"
        )
    out = np.empty((bands, y.shape[0], width), dtype=np.float64)
    for band in range(bands):
        offset = shear_step * band
        out[band] = y[:, offset:offset + width]
    return out
