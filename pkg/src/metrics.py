"""
Reconstruction quality: PSNR (per band, then mean), SSIM (scikit-image, per
band, then mean) and SAM (mean spectral angle in degrees). Reports are
tabulated with pandas and rendered with rich.
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Union

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike
from rich.console import Console
from rich.table import Table
from skimage.metrics import structural_similarity

from src.tensor_core import as_cube

logger = logging.getLogger(__name__)

# Reported when MSE is zero
PSNR_CEILING_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5

Peak = Union[Literal["reference_max", "unit"], float]


def _pair(x: ArrayLike, ref: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
    x = as_cube(x, "reconstruction")
    ref = as_cube(ref, "reference")
    if x.shape != ref.shape:
        raise ValueError(f"reconstruction shape {x.shape} does not match reference shape {ref.shape}")
    return x, ref


def resolve_peak(ref: np.ndarray, peak: Peak) -> float:
    if peak == "reference_max":
        value = float(ref.max())
    elif peak == "unit":
        value = 1.0
    else:
        value = float(peak)
    if value <= 0:
        raise ValueError(f"PSNR peak must be > 0, got {value}")
    return value


def psnr_per_band(x: ArrayLike, ref: ArrayLike, peak: Peak = "reference_max") -> np.ndarray:
    x, ref = _pair(x, ref)
    peak_value = resolve_peak(ref, peak)
    mse = ((x - ref) ** 2).reshape(x.shape[0], -1).mean(axis=1)
    out = np.full(mse.shape, PSNR_CEILING_DB)
    nonzero = mse > 0
    out[nonzero] = np.minimum(10.0 * np.log10(peak_value ** 2 / mse[nonzero]), PSNR_CEILING_DB)
    return out


def psnr(x: ArrayLike, ref: ArrayLike, peak: Peak = "reference_max") -> float:
    """Mean over bands of 10 log10(peak^2 / MSE_l), capped at PSNR_CEILING_DB."""
    return float(psnr_per_band(x, ref, peak).mean())


def ssim(x: ArrayLike, ref: ArrayLike) -> float:
    """Mean per-band SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03."""
    x, ref = _pair(x, ref)
    _, H, W = x.shape
    if H < SSIM_WINDOW or W < SSIM_WINDOW:
        raise ValueError(f"SSIM needs H, W >= {SSIM_WINDOW}, got H={H}, W={W}")
    # Shared range keeps ssim(x, ref) == ssim(ref, x)
    data_range = float(max(x.max(), ref.max()) - min(x.min(), ref.min())) or 1.0
    values = [
        structural_similarity(
            xb,
            rb,
            data_range=data_range,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            K1=0.01,
            K2=0.03,
        )
        for xb, rb in zip(x, ref)
    ]
    return float(np.mean(values))


def sam_detail(x: ArrayLike, ref: ArrayLike) -> tuple[float, int]:
    """(mean spectral angle in degrees over valid pixels, number of excluded zero-spectrum pixels)."""
    x, ref = _pair(x, ref)
    L = x.shape[0]
    xs = x.reshape(L, -1)
    rs = ref.reshape(L, -1)
    nx = np.linalg.norm(xs, axis=0)
    nr = np.linalg.norm(rs, axis=0)
    if not np.any(nr > 0):
        raise ValueError("SAM is undefined for an all-zero reference")
    valid = (nx > 0) & (nr > 0)
    excluded = int(valid.size - np.count_nonzero(valid))
    if not np.any(valid):
        raise ValueError("SAM is undefined: every reconstructed spectrum is zero")
    if excluded:
        logger.warning("SAM: %d zero-spectrum pixels excluded", excluded)
    cos = (xs[:, valid] * rs[:, valid]).sum(axis=0) / (nx[valid] * nr[valid])
    angles = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return float(angles.mean()), excluded


def sam(x: ArrayLike, ref: ArrayLike) -> float:
    """Mean spectral angle in degrees; zero-spectrum pixels are excluded."""
    return sam_detail(x, ref)[0]


@dataclass
class MetricReport:
    scene: str
    psnr_db: float
    ssim: float
    sam_degrees: float
    per_band_psnr: list[float] = field(default_factory=list)
    sam_excluded: int = 0
    peak: str = "reference_max"


def evaluate(x: ArrayLike, ref: ArrayLike, scene: str = "scene", peak: Peak = "reference_max") -> MetricReport:
    """All three metrics for one reconstruction."""
    bands = psnr_per_band(x, ref, peak)
    angle, excluded = sam_detail(x, ref)
    return MetricReport(
        scene=scene,
        psnr_db=float(bands.mean()),
        ssim=ssim(x, ref),
        sam_degrees=angle,
        per_band_psnr=[float(v) for v in bands],
        sam_excluded=excluded,
        peak=str(peak),
    )


REPORT_COLUMNS = ["scene", "psnr_db", "ssim", "sam_degrees", "sam_excluded"]
# Averaged in the Avg row; sam_excluded is summed there
_MEAN_COLUMNS = ["psnr_db", "ssim", "sam_degrees"]


def reports_to_frame(reports: Iterable[MetricReport], with_average: bool = True) -> pd.DataFrame:
    """One row per scene (PSNR / SSIM / SAM, zero-spectrum pixels left out of SAM), plus an 'Avg' row."""
    rows = [{c: getattr(r, c) for c in REPORT_COLUMNS} for r in reports]
    df = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    if with_average and len(df):
        avg = {"scene": "Avg", **df[_MEAN_COLUMNS].mean().to_dict(), "sam_excluded": int(df["sam_excluded"].sum())}
        df = pd.concat([df, pd.DataFrame([avg])], ignore_index=True)
    return df


def per_band_frame(report: MetricReport) -> pd.DataFrame:
    return pd.DataFrame({"band": np.arange(1, len(report.per_band_psnr) + 1), "psnr_db": report.per_band_psnr})


def write_report_csv(reports: Iterable[MetricReport], path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    reports_to_frame(reports).to_csv(path, index=False, float_format="%.17g")
    return path


def read_report_csv(path: Path | str) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Report not found: {path}")
    return pd.read_csv(path, dtype={"scene": str})


def render_report(reports: Iterable[MetricReport], title: str = "Reconstruction quality") -> Table:
    df = reports_to_frame(list(reports))
    table = Table(title=title)
    table.add_column("Scene")
    table.add_column("PSNR (dB)", justify="right")
    table.add_column("SSIM", justify="right")
    table.add_column("SAM (deg)", justify="right")
    for row in df.itertuples(index=False):
        style = "bold" if row.scene == "Avg" else None
        table.add_row(
            row.scene,
            f"{row.psnr_db:.2f}",
            f"{row.ssim:.4f}",
            f"{row.sam_degrees:.2f}" if math.isfinite(row.sam_degrees) else "n/a",
            style=style,
        )
    return table


def write_report_text(reports: Iterable[MetricReport], path: Path | str) -> Path:
    """Plain-text rendering of the rich table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    console = Console(record=True, width=100, file=io.StringIO())
    console.print(render_report(reports))
    path.write_text(console.export_text(), encoding="utf-8")
    return path


def print_report(reports: Iterable[MetricReport]) -> None:
    Console().print(render_report(reports))
