"""
SD-CASSI system model: forward projection, its adjoint, and the closed-form
minimum-norm backward model that follows from the diagonal Gram matrix.
The sensing matrix is never materialized; every operator is a composition of
shear placement, element-wise products and band sums.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike

from src.tensor_core import (
    Cube,
    Plane,
    as_cube,
    as_plane,
    band_sum,
    crop_repeated,
    inverse_shear,
    repeat_along_bands,
    safe_divide,
    shear_transform,
    sheared_width,
)

logger = logging.getLogger(__name__)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def gram_diagonal(t: Cube, shear_step: int) -> Plane:
    """Lambda = sum_l f_ST(T * T)_l, the diagonal of Phi Phi^T in plane form."""
    return band_sum(shear_transform(t * t, shear_step))


@dataclass(frozen=True)
class SystemModel:
    """
    Immutable SD-CASSI system: transmittance T (L, H, W), shear step s, the Gram
    diagonal Lambda (H, W + s(L-1)) and the shifted transmittance T' = f_ST(T)
    used only by the two-stage backward model. Build with build_system.
    """

    t: Cube
    shear_step: int
    lam: Plane
    t_shifted: Cube = field(repr=False)

    def __post_init__(self) -> None:
        if self.lam.shape != self.measurement_shape:
            raise ValueError(
                f"Lambda shape {self.lam.shape} does not match measurement shape {self.measurement_shape}"
            )
        if not np.array_equal(self.lam, gram_diagonal(self.t, self.shear_step)):
            raise ValueError("Lambda is inconsistent with T; construct the model with build_system")

    @property
    def dims(self) -> tuple[int, int, int]:
        """(H, W, L)."""
        L, H, W = self.t.shape
        return H, W, L

    @property
    def bands(self) -> int:
        return self.t.shape[0]

    @property
    def measurement_shape(self) -> tuple[int, int]:
        L, H, W = self.t.shape
        return H, sheared_width(W, L, self.shear_step)

    def check_cube(self, x: ArrayLike, name: str = "cube") -> Cube:
        x = as_cube(x, name)
        if x.shape != self.t.shape:
            L, H, W = x.shape
            raise ValueError(f"{name} dims {(H, W, L)} do not match system {self.dims}")
        return x

    def check_measurement(self, y: ArrayLike, name: str = "measurement") -> Plane:
        y = as_plane(y, name)
        if y.shape != self.measurement_shape:
            raise ValueError(
                f"{name} shape {y.shape} does not match system measurement shape {self.measurement_shape}"
            )
        return y


def build_system(t: ArrayLike, shear_step: int) -> SystemModel:
    """Validate T in [0, 1] and precompute Lambda and T' in O(HWL)."""
    t = as_cube(t, "transmittance")
    if t.min() < 0.0 or t.max() > 1.0:
        raise ValueError(
            f"transmittance entries must lie in [0, 1], got range [{t.min():.4g}, {t.max():.4g}]"
        )
    if shear_step < 0 or int(shear_step) != shear_step:
        raise ValueError(f"shear step must be a non-negative integer, got {shear_step}")
    shear_step = int(shear_step)
    t = _readonly(t)
    model = SystemModel(
        t=t,
        shear_step=shear_step,
        lam=_readonly(gram_diagonal(t, shear_step)),
        t_shifted=_readonly(shear_transform(t, shear_step)),
    )
    zero_rows = int(np.count_nonzero(model.lam == 0))
    if zero_rows:
        logger.debug("system: %d detector pixels receive no light (Lambda = 0)", zero_rows)
    return model


def forward(model: SystemModel, x: ArrayLike) -> Plane:
    """Y = sum_l f_ST(X * T)_l."""
    x = model.check_cube(x)
    return band_sum(shear_transform(x * model.t, model.shear_step))


def _lift(model: SystemModel, plane: Plane) -> Cube:
    """T * f_ST^dagger(plane repeated L times)."""
    L, _, W = model.t.shape
    return model.t * crop_repeated(plane, L, model.shear_step, W)


def adjoint(model: SystemModel, y: ArrayLike) -> Cube:
    """Phi^T y = T * f_ST^dagger(y repeated along bands)."""
    y = model.check_measurement(y)
    return _lift(model, y)


def backward(model: SystemModel, y: ArrayLike) -> Cube:
    """Minimum-norm least-squares estimate Phi^dagger y = T * f_ST^dagger((Y / Lambda) repeated)."""
    y = model.check_measurement(y)
    return _lift(model, safe_divide(y, model.lam))


def two_stage_backward(model: SystemModel, y: ArrayLike) -> Cube:
    """
    Reference form of backward: multiply in the sheared domain by T' and crop
    afterwards. Same arithmetic per entry as backward; kept for equivalence
    checks and the benchmark.
    """
    y = model.check_measurement(y)
    ratio = repeat_along_bands(safe_divide(y, model.lam), model.bands)
    return inverse_shear(model.t_shifted * ratio, model.shear_step, model.t.shape[2])


def simulate(
    model: SystemModel,
    x: ArrayLike,
    noise_sigma: float = 0.0,
    seed: Optional[int] = None,
) -> Plane:
    """forward(x) plus i.i.d. Gaussian noise N(0, sigma^2), reproducible per seed."""
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    y = forward(model, x)
    if noise_sigma == 0:
        return y
    rng = np.random.default_rng(seed)
    return y + noise_sigma * rng.standard_normal(y.shape)
