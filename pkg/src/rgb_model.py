"""
RGB / panchromatic branch of the dual-camera system.

Spectral response A is a (C, L) matrix, C in {1, 3}, rows in R, G, B order.
RGB images are (C, H, W); a Bayer raw frame is (H, W). The dual-camera
minimum-norm solve applies every operator matrix-free inside scipy CG.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray
from scipy import ndimage
from scipy.sparse.linalg import LinearOperator, cg

from config.settings import CG_STRICT
from src.cassi_model import SystemModel, adjoint, backward, forward
from src.tensor_core import Cube, Plane, as_cube

logger = logging.getLogger(__name__)

CHANNELS = "RGB"

# Normalized-convolution kernels; the scale cancels in demosaic_bilinear
_KERNEL_RB = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 4.0
_KERNEL_G = np.array([[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]]) / 4.0


class NumericalFailure(RuntimeError):
    """An inner CG solve did not converge and strict mode is on."""


# ---------------------------------------------------------------------------
# Spectral response
# ---------------------------------------------------------------------------


def check_response(a: ArrayLike, bands: Optional[int] = None) -> NDArray[np.float64]:
    """Return A as a validated (C, L) float64 matrix."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if a.ndim != 2:
        raise ValueError(f"spectral response must be a (C, L) matrix, got shape {a.shape}")
    if a.shape[0] not in (0, 1, 3):
        raise ValueError(f"spectral response must have 1 or 3 rows, got {a.shape[0]}")
    if bands is not None and a.shape[1] != bands:
        raise ValueError(f"spectral response has {a.shape[1]} columns, system has {bands} bands")
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise ValueError("spectral response entries must be finite and >= 0")
    if a.shape[0] and np.any(a.max(axis=1) <= 0):
        raise ValueError("every spectral response row needs at least one positive entry")
    return a


def default_response(bands: int, channels: int = 3) -> NDArray[np.float64]:
    """
    Gaussian bumps peaked at bands L, ceil(L/2), 1 (1-based) for R, G, B, each
    row normalized to unit sum; channels=1 gives a flat panchromatic row.
    """
    if bands < 1:
        raise ValueError(f"band count must be >= 1, got {bands}")
    if channels == 1:
        return np.full((1, bands), 1.0 / bands)
    if channels != 3:
        raise ValueError(f"channels must be 1 or 3, got {channels}")
    idx = np.arange(bands, dtype=np.float64)
    width = max(bands / 4.0, 0.5)
    rows = []
    for peak in channel_nodes(bands):
        row = np.exp(-0.5 * ((idx - peak) / width) ** 2)
        rows.append(row / row.sum())
    return np.vstack(rows)


def channel_nodes(bands: int) -> NDArray[np.float64]:
    """0-based band positions of the R, G, B channels: L-1, ceil(L/2)-1, 0."""
    return np.array([bands - 1, math.ceil(bands / 2) - 1, 0], dtype=np.float64)


def load_response(path: Path | str, bands: Optional[int] = None) -> NDArray[np.float64]:
    """Read a headerless CSV with C rows and L columns."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Spectral response file not found: {path}")
    df = pd.read_csv(path, header=None)
    return check_response(df.to_numpy(dtype=np.float64), bands)


# ---------------------------------------------------------------------------
# Forward models
# ---------------------------------------------------------------------------


def rgb_forward(a: ArrayLike, x: ArrayLike) -> NDArray[np.float64]:
    """(Y_r)_(3) = A X_(3): per-pixel spectral projection, (C, H, W)."""
    x = as_cube(x)
    a = check_response(a, x.shape[0])
    L, H, W = x.shape
    return (a @ x.reshape(L, H * W)).reshape(a.shape[0], H, W)


def rgb_adjoint(a: ArrayLike, y_r: ArrayLike) -> Cube:
    """Phi_r^T y_r = A^T (Y_r)_(3), (L, H, W)."""
    a = np.asarray(a, dtype=np.float64)
    y_r = np.asarray(y_r, dtype=np.float64)
    C, H, W = y_r.shape
    return (a.T @ y_r.reshape(C, H * W)).reshape(a.shape[1], H, W)


def bayer_channel_map(pattern: str, height: int, width: int) -> NDArray[np.int_]:
    """(H, W) array of channel indices (0=R, 1=G, 2=B) for a 2x2 Bayer layout."""
    pattern = pattern.upper()
    if len(pattern) != 4 or sorted(pattern) != sorted("RGGB"):
        raise ValueError(f"unsupported Bayer pattern {pattern!r}; use RGGB, BGGR, GRBG or GBRG")
    if height % 2 or width % 2:
        raise ValueError(f"Bayer mosaic needs even dims, got H={height}, W={width}")
    tile = np.array([[CHANNELS.index(pattern[0]), CHANNELS.index(pattern[1])],
                     [CHANNELS.index(pattern[2]), CHANNELS.index(pattern[3])]])
    return np.tile(tile, (height // 2, width // 2))


def mosaic_simulate(
    a: ArrayLike,
    x: ArrayLike,
    pattern: str = "RGGB",
    noise_sigma: float = 0.0,
    seed: Optional[int] = None,
) -> Plane:
    """Bayer raw frame: the channel the CFA dictates at every site, plus Gaussian noise."""
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    rgb = rgb_forward(a, x)
    if rgb.shape[0] != 3:
        raise ValueError(f"Bayer mosaic needs a 3-row spectral response, got {rgb.shape[0]} rows")
    _, H, W = rgb.shape
    cmap = bayer_channel_map(pattern, H, W)
    raw = np.take_along_axis(rgb, cmap[np.newaxis], axis=0)[0]
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        raw = raw + noise_sigma * rng.standard_normal(raw.shape)
    return raw


def demosaic_bilinear(raw: ArrayLike, pattern: str = "RGGB") -> NDArray[np.float64]:
    """
    Bilinear demosaic by normalized convolution; sampled sites keep their
    value exactly and affine images are reproduced away from the border.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise ValueError(f"raw frame must be 2-D, got shape {raw.shape}")
    cmap = bayer_channel_map(pattern, *raw.shape)
    out = np.empty((3, *raw.shape), dtype=np.float64)
    for channel in range(3):
        mask = (cmap == channel).astype(np.float64)
        kernel = _KERNEL_G if channel == 1 else _KERNEL_RB
        num = ndimage.convolve(raw * mask, kernel, mode="constant", cval=0.0)
        den = ndimage.convolve(mask, kernel, mode="constant", cval=0.0)
        plane = num / den
        plane[mask == 1] = raw[mask == 1]
        out[channel] = plane
    return out


# ---------------------------------------------------------------------------
# Dual-camera backward model
# ---------------------------------------------------------------------------


@dataclass
class CgResult:
    """Outcome of a matrix-free CG solve."""

    x: Cube
    converged: bool
    iterations: int
    residuals: list[float] = field(default_factory=list)


def _check_rgb(y_r: ArrayLike, a: NDArray, model: SystemModel) -> NDArray[np.float64]:
    y_r = np.asarray(y_r, dtype=np.float64)
    if y_r.ndim == 2:
        y_r = y_r[np.newaxis]
    _, H, W = model.t.shape
    if y_r.shape != (a.shape[0], H, W):
        raise ValueError(f"RGB image shape {y_r.shape} does not match expected {(a.shape[0], H, W)}")
    if not np.all(np.isfinite(y_r)):
        raise ValueError("RGB image contains non-finite entries")
    return y_r


def _report(name: str, info: int, iterations: int, strict: bool) -> bool:
    if info == 0:
        logger.debug("%s: CG converged in %d iterations", name, iterations)
        return True
    message = f"{name}: CG did not converge within {iterations} iterations (info={info})"
    if strict:
        raise NumericalFailure(message)
    logger.warning(message)
    return False


def dual_backward(
    model: SystemModel,
    a: ArrayLike,
    y: ArrayLike,
    y_r: ArrayLike,
    cg_tol: float = 1e-9,
    cg_max_iter: int = 500,
    strict: Optional[bool] = None,
) -> CgResult:
    """
    Minimum-norm solution of the stacked system [Phi; Phi_r] x = [y; y_r]:

        x = Phi^+ y + P Phi_r^T r,   P = I - Phi^+ Phi,
        F = Phi_r P Phi_r^T,         d = y_r - Phi_r Phi^+ y,

    with r the minimum-norm least-squares solution of F r = d, found by CG on
    F F r = F d (F is symmetric). For consistent data this is the pseudo-inverse
    of the stacked operator. residuals holds ||d - F r_k|| per iteration.
    """
    if cg_tol <= 0:
        raise ValueError(f"cg_tol must be > 0, got {cg_tol}")
    strict = CG_STRICT if strict is None else strict
    y = model.check_measurement(y)
    a = check_response(a, model.bands)
    x0 = backward(model, y)
    if a.shape[0] == 0:
        return CgResult(x=x0, converged=True, iterations=0)
    y_r = _check_rgb(y_r, a, model)
    shape_r = y_r.shape

    def project_out(v: Cube) -> Cube:
        return v - backward(model, forward(model, v))

    def apply_f(r: NDArray) -> NDArray:
        return rgb_forward(a, project_out(rgb_adjoint(a, r.reshape(shape_r)))).ravel()

    d = (y_r - rgb_forward(a, x0)).ravel()
    n = d.size
    normal_op = LinearOperator((n, n), matvec=lambda r: apply_f(apply_f(r)), dtype=np.float64)

    residuals: list[float] = []

    def record(rk: NDArray) -> None:
        residuals.append(float(np.linalg.norm(d - apply_f(rk))))

    r, info = cg(normal_op, apply_f(d), rtol=cg_tol, atol=0.0, maxiter=cg_max_iter, callback=record)
    converged = _report("dual_backward", info, len(residuals), strict)
    x = x0 + project_out(rgb_adjoint(a, r.reshape(shape_r)))
    return CgResult(x=x, converged=converged, iterations=len(residuals), residuals=residuals)


def stacked_regularized_solve(
    model: SystemModel,
    a: ArrayLike,
    y: ArrayLike,
    y_r: ArrayLike,
    v: ArrayLike,
    rho: float,
    cg_tol: float = 1e-8,
    cg_max_iter: int = 500,
    x_init: Optional[ArrayLike] = None,
    strict: Optional[bool] = None,
) -> CgResult:
    """Solve (Phi^T Phi + Phi_r^T Phi_r + rho I) x = Phi^T y + Phi_r^T y_r + rho v by CG."""
    if rho <= 0:
        raise ValueError(f"rho must be > 0, got {rho}")
    strict = CG_STRICT if strict is None else strict
    y = model.check_measurement(y)
    a = check_response(a, model.bands)
    v = model.check_cube(v, "proximal centre")
    shape = model.t.shape
    has_rgb = a.shape[0] > 0
    if has_rgb:
        y_r = _check_rgb(y_r, a, model)

    def matvec(xv: NDArray) -> NDArray:
        xc = xv.reshape(shape)
        out = adjoint(model, forward(model, xc)) + rho * xc
        if has_rgb:
            out += rgb_adjoint(a, rgb_forward(a, xc))
        return out.ravel()

    rhs = adjoint(model, y) + rho * v
    if has_rgb:
        rhs = rhs + rgb_adjoint(a, y_r)
    n = rhs.size
    op = LinearOperator((n, n), matvec=matvec, dtype=np.float64)
    x0 = None if x_init is None else np.asarray(x_init, dtype=np.float64).ravel()
    iterations = 0

    def count(_: NDArray) -> None:
        nonlocal iterations
        iterations += 1

    x, info = cg(op, rhs.ravel(), x0=x0, rtol=cg_tol, atol=0.0, maxiter=cg_max_iter, callback=count)
    converged = _report("stacked_regularized_solve", info, iterations, strict)
    return CgResult(x=x.reshape(shape), converged=converged, iterations=iterations)
