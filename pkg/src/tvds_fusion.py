"""
Fixed-point iteration for TVDS fusion:

    min_X  1/2 ||X - Z||^2 + mu (f_TV(X) + <div P_ref, X>)

Each sweep updates the dual field with the relaxed normalization step and
then the primal image from the Euler-Lagrange relation. With P_ref = 0 the
iteration is the classical dual projection TV denoiser with step mu*tau.
"""

from __future__ import annotations

import logging
from typing import Callable, Optional

import numpy as np
from numpy.typing import ArrayLike

from config.schema import FusionParams
from src.tensor_core import Cube, as_cube, inner
from src.tvds import DualField, divergence, gradient, pointwise_norm, tv_value, zero_field

logger = logging.getLogger(__name__)

# (k, x, p) after each sweep; k is 1-based
IterationHook = Callable[[int, Cube, DualField], None]


def _check_ref(p_ref: Optional[ArrayLike], shape: tuple[int, ...]) -> DualField:
    if p_ref is None:
        return zero_field(shape)
    p_ref = np.asarray(p_ref, dtype=np.float64)
    if p_ref.shape != (2, *shape):
        raise ValueError(f"dual field shape {p_ref.shape} does not match cube shape (2, {shape})")
    if not np.all(np.isfinite(p_ref)):
        raise ValueError("dual field contains non-finite entries")
    return p_ref


def dual_step(p: DualField, x: Cube, tau: float) -> DualField:
    """P <- (P + tau grad X) / (1 + tau |grad X|); keeps |P| <= 1 whenever |P| <= 1."""
    g = gradient(x)
    return (p + tau * g) / (1.0 + tau * pointwise_norm(g))[np.newaxis]


def fuse(
    z: ArrayLike,
    p_ref: Optional[ArrayLike],
    params: FusionParams,
    p_init: Optional[ArrayLike] = None,
    on_iteration: Optional[IterationHook] = None,
) -> tuple[Cube, DualField]:
    """
    Run K sweeps from P = p_init (zero by default), X = Z - mu div P_ref + mu div P,
    and return (X, P). -div(P) is the TV subgradient estimate at X. Passing a
    returned P back as p_init continues the same iteration. A params.tol
    enables an early exit once the relative Euler-Lagrange residual drops
    below it.

    Fusing Z = X_ref with its own P_ref returns X_ref exactly when started
    from p_init = P_ref; from P = 0 it only converges there at the sublinear
    rate of the dual projection method.
    """
    z = as_cube(z, "fusion input")
    p_ref = _check_ref(p_ref, z.shape)
    p = _check_ref(p_init, z.shape).copy() if p_init is not None else zero_field(z.shape)
    mu, tau = params.mu, params.tau

    # Z - mu div P_ref is constant across sweeps
    anchor = z - mu * divergence(p_ref)
    x = anchor + mu * divergence(p)
    z_norm = float(np.linalg.norm(z)) or 1.0
    for k in range(1, params.max_iters + 1):
        p = dual_step(p, x, tau)
        x = anchor + mu * divergence(p)
        if on_iteration is not None:
            on_iteration(k, x, p)
        if params.tol is not None:
            residual = euler_lagrange_residual(z, x, p, p_ref, mu, tau)
            if residual <= params.tol * z_norm:
                logger.debug("fuse: early exit at sweep %d (residual %.3e)", k, residual)
                break
    return x, p


def objective(z: ArrayLike, x: ArrayLike, p_ref: Optional[ArrayLike], mu: float) -> float:
    """1/2 ||X - Z||^2 + mu (f_TV(X) + <div P_ref, X>)."""
    z = as_cube(z, "fusion input")
    x = as_cube(x, "fusion output")
    if x.shape != z.shape:
        raise ValueError(f"fusion output shape {x.shape} does not match input shape {z.shape}")
    p_ref = _check_ref(p_ref, z.shape)
    diff = x - z
    return 0.5 * inner(diff, diff) + mu * (tv_value(x) + inner(divergence(p_ref), x))


def euler_lagrange_residual(
    z: ArrayLike,
    x: ArrayLike,
    p: ArrayLike,
    p_ref: Optional[ArrayLike],
    mu: float,
    tau: float,
) -> float:
    """
    ||X - Z + mu div P_ref - mu div P~|| with P~ = dual_step(P, X, tau).
    Zero exactly when (X, P) is a fixed point of both fusion updates.
    """
    z = as_cube(z, "fusion input")
    x = as_cube(x, "fusion output")
    p_ref = _check_ref(p_ref, z.shape)
    p = _check_ref(p, z.shape)
    p_next = dual_step(p, x, tau)
    r = x - z + mu * divergence(p_ref) - mu * divergence(p_next)
    return float(np.linalg.norm(r))
