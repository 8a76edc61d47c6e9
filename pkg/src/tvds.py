"""
Discrete isotropic TV per band: forward-difference gradient, its negative
adjoint (divergence), the normalized dual field whose negative divergence is a
TV subgradient, and the TVDS value f_TV(X) - <G, X>.

Dual fields have shape (2, L, H, W); index 0 differences along rows (m),
index 1 along columns (n). Neumann boundary: the last row of component 0 and
the last column of component 1 are zero.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray

from src.tensor_core import Cube, as_cube, inner

DualField = NDArray[np.float64]


def _check_field(p: ArrayLike, name: str = "dual field") -> DualField:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 4 or p.shape[0] != 2:
        raise ValueError(f"{name} must have shape (2, L, H, W), got {p.shape}")
    return p


def zero_field(shape: tuple[int, int, int]) -> DualField:
    """Zero dual field for a cube of storage shape (L, H, W)."""
    return np.zeros((2, *shape), dtype=np.float64)


def gradient(x: ArrayLike) -> DualField:
    """Forward differences, zero at m = H (component 0) and n = W (component 1)."""
    x = as_cube(x)
    g = np.zeros((2, *x.shape), dtype=np.float64)
    g[0, :, :-1, :] = x[:, 1:, :] - x[:, :-1, :]
    g[1, :, :, :-1] = x[:, :, 1:] - x[:, :, :-1]
    return g


def divergence(p: ArrayLike) -> Cube:
    """
    (div P)_{m,n} = P0_{m} - P0_{m-1} + P1_{n} - P1_{n-1}, out-of-range terms zero.

    The last row of P0 and last column of P1 are treated as zero (they are
    never produced by gradient), so <grad x, p> = -<x, div p> holds for every
    p, not only for fields that already satisfy the Neumann condition.
    """
    p = _check_field(p)
    out = np.zeros(p.shape[1:], dtype=np.float64)
    p0 = p[0, :, :-1, :]
    p1 = p[1, :, :, :-1]
    out[:, :-1, :] += p0
    out[:, 1:, :] -= p0
    out[:, :, :-1] += p1
    out[:, :, 1:] -= p1
    return out


def pointwise_norm(p: ArrayLike) -> NDArray[np.float64]:
    """Euclidean norm of the 2-vector at every (l, m, n)."""
    p = _check_field(p)
    return np.sqrt(p[0] * p[0] + p[1] * p[1])


def dual_field(x: ArrayLike) -> DualField:
    """Normalized gradient; exactly zero where the gradient vanishes."""
    g = gradient(x)
    norm = pointwise_norm(g)
    out = np.zeros_like(g)
    np.divide(g, norm[np.newaxis], out=out, where=norm[np.newaxis] != 0)
    return out


def subgradient(x: ArrayLike) -> Cube:
    """-div(dual_field(x)), an element of the TV subdifferential at x."""
    return -divergence(dual_field(x))


def tv_value(x: ArrayLike) -> float:
    """Isotropic spatial TV summed over bands."""
    return float(pointwise_norm(gradient(x)).sum())


def tvds_value(x: ArrayLike, g: ArrayLike) -> float:
    """f_TV(x) - <g, x>. With g = -div(P_ref) this is the TVDS regularizer."""
    x = as_cube(x)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != x.shape:
        raise ValueError(f"subgradient target shape {g.shape} does not match cube shape {x.shape}")
    return tv_value(x) - inner(g, x)
