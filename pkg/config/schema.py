"""
Typed run configuration for simulation, reconstruction and evaluation.
Defaults are the standard ADMM-TVDS settings; constraints encode the
preconditions of the numerical modules so a bad config fails before any compute.
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from contextvars import ContextVar
from pathlib import Path
from typing import Any, Iterator, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict, TomlConfigSettingsSource

from config.settings import DATA_DIR

logger = logging.getLogger(__name__)

# Fixed-point fusion converges for 0 < mu*tau < 1/8
FUSION_STEP_BOUND = 1.0 / 8.0

MODES = ("tvds", "tvds_star", "tv_only")
BAYER_PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")
SCENE_KINDS = ("piecewise", "gaussian-blobs", "ramp")


class FusionParams(BaseModel):
    """Fixed-point TVDS fusion: weight mu, step tau, sweeps K, optional early exit."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mu: float = Field(0.5, ge=0.0)
    tau: float = Field(0.125, gt=0.0)
    max_iters: int = Field(30, ge=1)
    # Relative Euler-Lagrange residual for early exit; None keeps K fixed
    tol: Optional[float] = Field(None, gt=0.0)

    @model_validator(mode="after")
    def _warn_step_bound(self) -> "FusionParams":
        if self.mu * self.tau >= FUSION_STEP_BOUND:
            logger.warning(
                "fusion: mu*tau = %.4g >= 1/8; fixed-point convergence is not guaranteed",
                self.mu * self.tau,
            )
        return self


class AdmmParams(BaseModel):
    """Staged ADMM-TVDS parameters (stage n uses mu*f^(1-n), tau*f^(n-1))."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    rho: float = Field(0.03, gt=0.0)
    mu: float = Field(0.015, ge=0.0)
    tau: float = Field(0.125, gt=0.0)
    stage_factor: float = Field(1.2, gt=0.0)
    inner_iters: int = Field(30, ge=1)
    iters_per_stage: int = Field(10, ge=1)
    num_stages: int = Field(30, ge=1)
    ref_update_interval: int = Field(10, ge=1)
    order: Literal["printed", "conventional"] = "printed"
    # Carry the fusion dual field across ADMM iterations
    warm_start: bool = True
    # Blocks of inner_iters sweeps a Z-step may use to descend; 1 keeps K fixed
    max_fusion_rounds: int = Field(4, ge=1)
    dual_cg_tol: float = Field(1e-8, gt=0.0)
    dual_cg_max_iter: int = Field(500, ge=1)


class NoiseParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    cassi_sigma: float = Field(0.0, ge=0.0)
    rgb_sigma: float = Field(0.0, ge=0.0)


class PathsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scene: Optional[Path] = None
    mask: Optional[Path] = None
    rgb_response: Optional[Path] = None
    simulation_dir: Optional[Path] = None
    # CASSI_DATA_DIR/run unless set
    output_dir: Path = Field(default_factory=lambda: DATA_DIR / "run")


_CONFIG_FILE: ContextVar[Optional[Path]] = ContextVar("_CONFIG_FILE", default=None)


class RunConfig(BaseSettings):
    """
    One run of the pipeline. Sources, highest priority first: explicit keyword
    overrides (CLI flags), CASSI_* environment variables (nested with "__"),
    the TOML file passed to load_run_config, then the defaults below.
    """

    model_config = SettingsConfigDict(
        env_prefix="CASSI_",
        env_nested_delimiter="__",
        extra="forbid",
    )

    paths: PathsConfig = Field(default_factory=PathsConfig)
    shear_step: int = Field(1, ge=0)
    noise: NoiseParams = Field(default_factory=NoiseParams)
    admm: AdmmParams = Field(default_factory=AdmmParams)
    mode: Literal["tvds", "tvds_star", "tv_only"] = "tvds"
    bayer_pattern: Literal["RGGB", "BGGR", "GRBG", "GBRG"] = "RGGB"
    lift: Literal["interpolate", "pinv"] = "interpolate"
    nodes_from_response: bool = False
    peak: Literal["reference_max", "unit"] = "reference_max"
    seed: int = Field(0, ge=0)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls,
        init_settings,
        env_settings,
        dotenv_settings,
        file_secret_settings,
    ):
        sources = [init_settings, env_settings]
        path = _CONFIG_FILE.get()
        if path is not None:
            sources.append(TomlConfigSettingsSource(settings_cls, toml_file=path))
        return tuple(sources)

    def fusion_params(self, stage: int = 1) -> FusionParams:
        """FusionParams of the Z-step at a given stage (weight mu/rho)."""
        mu, tau = stage_schedule(self.admm, stage)
        return FusionParams(mu=mu / self.admm.rho, tau=tau, max_iters=self.admm.inner_iters)


@contextmanager
def _config_file(path: Optional[Path]) -> Iterator[None]:
    token = _CONFIG_FILE.set(path)
    try:
        yield
    finally:
        _CONFIG_FILE.reset(token)


def load_run_config(path: Optional[Path] = None, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """Build a validated RunConfig from an optional TOML file plus nested overrides."""
    if path is not None and not Path(path).exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    with _config_file(Path(path) if path is not None else None):
        return RunConfig(**(overrides or {}))


def stage_schedule(params: AdmmParams, stage: int) -> tuple[float, float]:
    """(mu, tau) for 1-based stage n: mu*f^(1-n), tau*f^(n-1). Their product is stage-invariant."""
    if stage < 1:
        raise ValueError(f"stage must be >= 1, got {stage}")
    scale = params.stage_factor ** (stage - 1)
    return params.mu / scale, params.tau * scale
