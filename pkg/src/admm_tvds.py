"""
Staged ADMM driver for

    min_X  1/2 ||y - Phi x||^2 + mu (f_TV(X) + <div P_ref, X>)

split as X = Z. The X-step is the closed Woodbury form (one forward, one
adjoint-like correction), the Z-step is TVDS fusion with weight mu/rho, and
U is the scaled multiplier. mu and tau follow the per-stage schedule; the
reference is refreshed by LRDS between stages when an RGB frame is present.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Literal, Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from config.schema import AdmmParams, FusionParams, stage_schedule
from src.cassi_model import SystemModel, backward, forward
from src.reference import ReferenceBundle, lrds_update, reference_from_cube, rgb_subspace
from src.rgb_model import check_response, dual_backward, stacked_regularized_solve
from src.tensor_core import Cube, crop_repeated, inner, safe_divide, sheared_width
from src.tvds import DualField, divergence, tv_value, zero_field
from src.tvds_fusion import fuse, objective

logger = logging.getLogger(__name__)

Mode = Literal["tvds", "tvds_star", "tv_only"]


@dataclass
class OperationCounter:
    """
    Element-operation tally: forward 2HWL, adjoint-like correction HWL + HW',
    one fixed-point sweep 6HWL.
    """

    forward_ops: int = 0
    correction_ops: int = 0
    sweep_ops: int = 0
    sweeps: int = 0

    def add_x_update(self, model: SystemModel) -> None:
        H, W, L = model.dims
        self.forward_ops += 2 * H * W * L
        self.correction_ops += H * W * L + H * sheared_width(W, L, model.shear_step)

    def add_sweeps(self, shape: tuple[int, ...], count: int) -> None:
        self.sweep_ops += 6 * int(np.prod(shape)) * count
        self.sweeps += count

    @property
    def total(self) -> int:
        return self.forward_ops + self.correction_ops + self.sweep_ops


@dataclass
class AdmmState:
    x: Cube
    z: Cube
    u: Cube
    p: Optional[DualField] = None
    stage: int = 1
    iteration: int = 0


@dataclass(frozen=True)
class IterationRecord:
    """Diagnostics after one ADMM iteration (stage and iteration are 1-based)."""

    stage: int
    iteration: int
    mu: float
    tau: float
    primal_residual: float
    dual_residual: float
    objective: float
    merit: float
    reference_refreshed: bool = False


IterationCallback = Callable[[IterationRecord], None]


def x_update(
    model: SystemModel,
    y: ArrayLike,
    z: Cube,
    u: Cube,
    rho: float,
    counter: Optional[OperationCounter] = None,
) -> Cube:
    """X = V + T * f_ST^dagger(((Y - forward(V)) / (rho + Lambda)) repeated), V = Z - U."""
    if rho <= 0:
        raise ValueError(f"rho must be > 0, got {rho}")
    y = model.check_measurement(y)
    v = model.check_cube(z, "z") - model.check_cube(u, "u")
    correction = safe_divide(y - forward(model, v), rho + model.lam)
    L, _, W = model.t.shape
    if counter is not None:
        counter.add_x_update(model)
    return v + model.t * crop_repeated(correction, L, model.shear_step, W)


def z_update(
    x: Cube,
    u: Cube,
    p_ref: Optional[DualField],
    rho: float,
    mu: float,
    tau: float,
    inner_iters: int,
    p_init: Optional[DualField] = None,
    counter: Optional[OperationCounter] = None,
    z_prev: Optional[Cube] = None,
    max_rounds: int = 1,
) -> tuple[Cube, DualField]:
    """
    argmin_Z TV(Z) + <div P_ref, Z> + rho/(2 mu) ||Z - X - U||^2, by fusion with weight mu/rho.

    With z_prev given the step is a descent step on that subproblem: fusion
    continues for up to max_rounds blocks of inner_iters sweeps until its
    objective is no higher than at z_prev, and z_prev is kept otherwise.
    """
    if rho <= 0:
        raise ValueError(f"rho must be > 0, got {rho}")
    if max_rounds < 1:
        raise ValueError(f"max_rounds must be >= 1, got {max_rounds}")
    params = FusionParams(mu=mu / rho, tau=tau, max_iters=inner_iters)
    v = x + u
    z, p = fuse(v, p_ref, params, p_init=p_init)
    rounds = 1
    if z_prev is not None:
        target = objective(v, z_prev, p_ref, params.mu)
        value = objective(v, z, p_ref, params.mu)
        while value > target and rounds < max_rounds:
            z, p = fuse(v, p_ref, params, p_init=p)
            value = objective(v, z, p_ref, params.mu)
            rounds += 1
        if value > target:
            logger.debug("z-step: no descent after %d sweeps, keeping previous Z", rounds * inner_iters)
            z = z_prev.copy()
    if counter is not None:
        counter.add_sweeps(x.shape, rounds * inner_iters)
    return z, p


def u_update(u: Cube, x: Cube, z: Cube) -> Cube:
    """U + X - Z."""
    return u + x - z


def data_objective(model: SystemModel, y: NDArray, z: Cube, p_ref: Optional[DualField], mu: float) -> float:
    """1/2 ||y - Phi z||^2 + mu (f_TV(z) + <div P_ref, z>)."""
    r = y - forward(model, z)
    reg = tv_value(z)
    if p_ref is not None:
        reg += inner(divergence(p_ref), z)
    return 0.5 * inner(r, r) + mu * reg


def augmented_lagrangian(
    model: SystemModel,
    y: NDArray,
    state: AdmmState,
    p_ref: Optional[DualField],
    mu: float,
    rho: float,
) -> float:
    """Scaled-form merit L(X, Z, U) = f(X) + g(Z) + rho/2 ||X - Z + U||^2 - rho/2 ||U||^2."""
    r = y - forward(model, state.x)
    reg = tv_value(state.z)
    if p_ref is not None:
        reg += inner(divergence(p_ref), state.z)
    gap = state.x - state.z + state.u
    return 0.5 * inner(r, r) + mu * reg + 0.5 * rho * (inner(gap, gap) - inner(state.u, state.u))


def _initial_reference(
    model: SystemModel,
    x_ref0: Union[ArrayLike, ReferenceBundle, None],
    y_r: Optional[NDArray],
    mode: Mode,
) -> Optional[ReferenceBundle]:
    if mode == "tv_only":
        return None
    if isinstance(x_ref0, ReferenceBundle):
        bundle = x_ref0
        model.check_cube(bundle.x_ref, "reference")
        return bundle
    if x_ref0 is None:
        raise ValueError(f"mode {mode!r} needs a reference image; generate one from the RGB frame first")
    x_ref0 = model.check_cube(x_ref0, "reference")
    v_basis = rgb_subspace(y_r) if y_r is not None else None
    return reference_from_cube(x_ref0, v_basis=v_basis)


def reconstruct(
    model: SystemModel,
    y: ArrayLike,
    x_ref0: Union[ArrayLike, ReferenceBundle, None] = None,
    params: Optional[AdmmParams] = None,
    rgb: Optional[tuple[ArrayLike, ArrayLike]] = None,
    mode: Mode = "tvds",
    callbacks: Iterable[IterationCallback] = (),
    counter: Optional[OperationCounter] = None,
    x_init: Optional[ArrayLike] = None,
) -> Cube:
    """
    Run num_stages x iters_per_stage ADMM iterations and return the final X.

    rgb is (A, Y_r) with Y_r a (C, H, W) image; it enables LRDS refreshes every
    ref_update_interval stages and is required by tvds_star. tv_only ignores
    both the reference and rgb. X starts from backward(y), or from the
    dual-camera minimum-norm solution in tvds_star, unless x_init is given;
    U starts at zero.
    """
    params = params or AdmmParams()
    callbacks = list(callbacks)
    if mode not in ("tvds", "tvds_star", "tv_only"):
        raise ValueError(f"unknown mode {mode!r}")
    y = model.check_measurement(y)

    a = y_r = None
    if rgb is not None and mode != "tv_only":
        a = check_response(rgb[0], model.bands)
        y_r = np.asarray(rgb[1], dtype=np.float64)
        if y_r.ndim == 2:
            y_r = y_r[np.newaxis]
    if mode == "tvds_star" and a is None:
        raise ValueError("mode 'tvds_star' needs the RGB frame and its spectral response")

    bundle = _initial_reference(model, x_ref0, y_r, mode)
    if x_init is not None:
        x0 = model.check_cube(x_init, "initial image")
    elif mode == "tvds_star":
        x0 = dual_backward(
            model, a, y, y_r, cg_tol=params.dual_cg_tol, cg_max_iter=params.dual_cg_max_iter,
        ).x
    else:
        x0 = backward(model, y)
    state = AdmmState(x=x0, z=x0.copy(), u=np.zeros_like(x0))
    rho = params.rho
    want_records = bool(callbacks) or logger.isEnabledFor(logging.DEBUG)

    def solve_x(z: Cube, u: Cube, previous: Cube) -> Cube:
        if mode == "tvds_star":
            result = stacked_regularized_solve(
                model, a, y, y_r, z - u, rho,
                cg_tol=params.dual_cg_tol, cg_max_iter=params.dual_cg_max_iter, x_init=previous,
            )
            return result.x
        return x_update(model, y, z, u, rho, counter=counter)

    def z_step(x: Cube, u: Cube, p_init: Optional[DualField]) -> tuple[Cube, DualField]:
        # mu, tau and p_ref are those of the current stage
        return z_update(
            x, u, p_ref, rho, mu, tau, params.inner_iters, p_init, counter,
            z_prev=state.z, max_rounds=params.max_fusion_rounds,
        )

    for stage in range(1, params.num_stages + 1):
        mu, tau = stage_schedule(params, stage)
        p_ref = bundle.p_ref if bundle is not None else zero_field(x0.shape)
        state.stage = stage
        logger.info("stage %d/%d: mu=%.4g tau=%.4g", stage, params.num_stages, mu, tau)
        for it in range(1, params.iters_per_stage + 1):
            state.iteration = it
            z_prev = state.z
            p_init = state.p if params.warm_start else None
            if params.order == "printed":
                state.z, p = z_step(state.x, state.u, p_init)
                state.u = u_update(state.u, state.x, state.z)
                state.x = solve_x(state.z, state.u, state.x)
            else:
                state.x = solve_x(state.z, state.u, state.x)
                state.z, p = z_step(state.x, state.u, p_init)
                state.u = u_update(state.u, state.x, state.z)
            state.p = p

            refresh = (
                it == params.iters_per_stage
                and stage < params.num_stages
                and stage % params.ref_update_interval == 0
                and bundle is not None
                and bundle.v_basis is not None
            )
            if want_records:
                record = IterationRecord(
                    stage=stage,
                    iteration=it,
                    mu=mu,
                    tau=tau,
                    primal_residual=float(np.linalg.norm(state.x - state.z)),
                    dual_residual=float(rho * np.linalg.norm(state.z - z_prev)),
                    objective=data_objective(model, y, state.z, p_ref, mu),
                    merit=augmented_lagrangian(model, y, state, p_ref, mu, rho),
                    reference_refreshed=refresh,
                )
                logger.debug(
                    "stage %d iter %d: primal=%.3e dual=%.3e objective=%.6g",
                    stage, it, record.primal_residual, record.dual_residual, record.objective,
                )
                for callback in callbacks:
                    callback(record)
            if refresh:
                bundle = lrds_update(bundle, state.x)
                logger.info("stage %d: reference refreshed by LRDS projection", stage)

    logger.info(
        "reconstruct: done, primal residual %.3e (relative %.3e)",
        np.linalg.norm(state.x - state.z),
        np.linalg.norm(state.x - state.z) / max(np.linalg.norm(state.z), np.finfo(float).tiny),
    )
    return state.x
