"""
Reference image for TVDS guidance: lift the RGB/panchromatic frame to L bands,
energy-match each band against the CASSI measurement, and refresh the
reference between stages by projecting the current estimate onto the RGB
frame's spectral subspace (LRDS).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Literal, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from src.cassi_model import SystemModel
from src.rgb_model import channel_nodes, check_response
from src.tensor_core import Cube, as_cube
from src.tvds import DualField, dual_field

logger = logging.getLogger(__name__)

# Relative singular-value cutoff for the RGB subspace
_SVD_RTOL = 1e-12


class EnergyMatchError(ValueError):
    """The energy-match normal matrix is rank deficient."""


@dataclass(frozen=True)
class ReferenceBundle:
    """
    x_ref with its dual field p_ref = dual_field(x_ref). v_basis is the
    (H*W, r) matrix of right singular vectors of the RGB unfolding (r <= C),
    None when the reference did not come from an RGB frame.
    """

    x_ref: Cube
    p_ref: DualField
    v_basis: Optional[NDArray[np.float64]] = None
    beta: Optional[NDArray[np.float64]] = None


def reference_from_cube(
    x_ref: ArrayLike,
    v_basis: Optional[NDArray[np.float64]] = None,
    beta: Optional[NDArray[np.float64]] = None,
) -> ReferenceBundle:
    """Bundle a reference cube with its dual field."""
    x_ref = as_cube(x_ref, "reference")
    return ReferenceBundle(x_ref=x_ref, p_ref=dual_field(x_ref), v_basis=v_basis, beta=beta)


def _as_channels(y_r: ArrayLike) -> NDArray[np.float64]:
    y_r = np.asarray(y_r, dtype=np.float64)
    if y_r.ndim == 2:
        y_r = y_r[np.newaxis]
    if y_r.ndim != 3 or y_r.shape[0] not in (1, 3):
        raise ValueError(f"RGB image must be (C, H, W) with C in (1, 3), got shape {y_r.shape}")
    return y_r


def interpolation_weights(bands: int, nodes: ArrayLike) -> NDArray[np.float64]:
    """
    (L, C) matrix of linear-interpolation weights from channels placed at the
    given 0-based band positions; rows are convex combinations. Channels that
    share a node are averaged; outside the node range values are held.
    """
    nodes = np.asarray(nodes, dtype=np.float64)
    positions = np.arange(bands, dtype=np.float64)
    unique = np.unique(nodes)
    weights = np.zeros((bands, nodes.size), dtype=np.float64)
    for node in unique:
        indicator = (unique == node).astype(np.float64)
        w = np.interp(positions, unique, indicator)
        members = np.flatnonzero(nodes == node)
        weights[:, members] = (w / members.size)[:, np.newaxis]
    return weights


def interpolate_rgb_to_cube(
    y_r: ArrayLike,
    bands: int,
    nodes: Optional[ArrayLike] = None,
) -> Cube:
    """
    Per-pixel linear interpolation of the C channel values across L bands.
    RGB channels sit at bands L-1, ceil(L/2)-1, 0 unless nodes are given;
    a panchromatic frame is replicated.
    """
    if bands < 1:
        raise ValueError(f"band count must be >= 1, got {bands}")
    y_r = _as_channels(y_r)
    C, H, W = y_r.shape
    if C == 1:
        return np.repeat(y_r, bands, axis=0)
    nodes = channel_nodes(bands) if nodes is None else np.asarray(nodes, dtype=np.float64)
    if nodes.shape != (C,):
        raise ValueError(f"need {C} interpolation nodes, got {nodes.shape}")
    weights = interpolation_weights(bands, nodes)
    return (weights @ y_r.reshape(C, H * W)).reshape(bands, H, W)


def response_nodes(a: ArrayLike) -> NDArray[np.float64]:
    """Interpolation nodes at the peak band of each response row."""
    a = check_response(a)
    return np.argmax(a, axis=1).astype(np.float64)


def pinv_lift(a: ArrayLike, y_r: ArrayLike) -> Cube:
    """A^+ (Y_r)_(3): least-squares spectral lift through a known response."""
    y_r = _as_channels(y_r)
    a = check_response(a)
    C, H, W = y_r.shape
    if a.shape[0] != C:
        raise ValueError(f"response has {a.shape[0]} rows but the image has {C} channels")
    return (np.linalg.pinv(a) @ y_r.reshape(C, H * W)).reshape(a.shape[1], H, W)


def band_projections(model: SystemModel, x_r: ArrayLike) -> NDArray[np.float64]:
    """(L, H*W') matrix whose row l is forward() of the cube holding only band l of x_r."""
    x_r = model.check_cube(x_r, "lifted RGB cube")
    L, H, W = x_r.shape
    s = model.shear_step
    out = np.zeros((L, *model.measurement_shape), dtype=np.float64)
    for band in range(L):
        out[band, :, s * band:s * band + W] = x_r[band] * model.t[band]
    return out.reshape(L, -1)


def estimate_beta(model: SystemModel, y: ArrayLike, x_r: ArrayLike) -> NDArray[np.float64]:
    """Least-squares band scales beta minimizing ||y - Phi (x_r x_3 diag(beta))||."""
    y = model.check_measurement(y)
    basis = band_projections(model, x_r)
    normal = basis @ basis.T
    rank = np.linalg.matrix_rank(normal)
    if rank < normal.shape[0]:
        raise EnergyMatchError(
            f"energy-match normal matrix has rank {rank} < {normal.shape[0]}; "
            "some band of the lifted RGB cube is invisible to the CASSI branch. "
            "Use a different lift or a denser mask."
        )
    return np.linalg.solve(normal, basis @ y.ravel())


def rgb_subspace(y_r: ArrayLike) -> NDArray[np.float64]:
    """Right singular vectors (H*W, r) of the C x HW unfolding, r = numerical rank."""
    y_r = _as_channels(y_r)
    C, H, W = y_r.shape
    _, sv, vt = np.linalg.svd(y_r.reshape(C, H * W), full_matrices=False)
    if sv.size == 0 or sv[0] == 0:
        raise ValueError("RGB image is identically zero; no spectral subspace")
    rank = int(np.count_nonzero(sv > _SVD_RTOL * sv[0]))
    return vt[:rank].T.copy()


def generate_reference(
    model: SystemModel,
    y: ArrayLike,
    y_r: ArrayLike,
    a: Optional[ArrayLike] = None,
    lift: Literal["interpolate", "pinv"] = "interpolate",
    nodes_from_response: bool = False,
) -> ReferenceBundle:
    """X_ref = X_r x_3 diag(beta), plus its dual field and the RGB subspace for LRDS."""
    y_r = _as_channels(y_r)
    if lift == "pinv":
        if a is None:
            raise ValueError("lift='pinv' needs the spectral response")
        x_r = pinv_lift(a, y_r)
    elif lift == "interpolate":
        if nodes_from_response and a is None:
            raise ValueError("nodes_from_response needs the spectral response")
        nodes = response_nodes(a) if nodes_from_response else None
        x_r = interpolate_rgb_to_cube(y_r, model.bands, nodes)
    else:
        raise ValueError(f"unknown lift {lift!r}")
    beta = estimate_beta(model, y, x_r)
    logger.info("reference: beta range [%.4g, %.4g] over %d bands", beta.min(), beta.max(), beta.size)
    x_ref = x_r * beta[:, np.newaxis, np.newaxis]
    return reference_from_cube(x_ref, v_basis=rgb_subspace(y_r), beta=beta)


def lrds_update(bundle: ReferenceBundle, x_current: ArrayLike) -> ReferenceBundle:
    """New reference with mode-3 unfolding X_(3) V V^T; p_ref recomputed."""
    if bundle.v_basis is None:
        raise ValueError("reference has no RGB subspace; LRDS update needs one")
    x_current = as_cube(x_current, "current estimate")
    if x_current.shape != bundle.x_ref.shape:
        raise ValueError(f"estimate shape {x_current.shape} does not match reference {bundle.x_ref.shape}")
    L, H, W = x_current.shape
    v = bundle.v_basis
    projected = ((x_current.reshape(L, H * W) @ v) @ v.T).reshape(L, H, W)
    return replace(bundle, x_ref=projected, p_ref=dual_field(projected))
