"""
Wall-clock comparison of the end-to-end backward model against the two-stage
form on a random system.
"""

import logging
import statistics
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from rich.console import Console
from rich.table import Table

from src.cassi_model import SystemModel, backward, build_system, forward, two_stage_backward
from src.synthetic import generate_mask

logger = logging.getLogger(__name__)

DEFAULT_DIMS = (256, 256, 28)
DEFAULT_SHEAR = 2
DEFAULT_RUNS = 20


@dataclass(frozen=True)
class BenchmarkResult:
    dims: tuple[int, int, int]
    shear_step: int
    runs: int
    backward_median_s: float
    two_stage_median_s: float

    @property
    def speedup(self) -> float:
        return self.two_stage_median_s / self.backward_median_s if self.backward_median_s > 0 else float("inf")


def _median_time(fn: Callable[[], object], runs: int) -> float:
    times = []
    for _ in range(runs):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def run_benchmark(
    dims: tuple[int, int, int] = DEFAULT_DIMS,
    shear_step: int = DEFAULT_SHEAR,
    runs: int = DEFAULT_RUNS,
    seed: int = 0,
) -> BenchmarkResult:
    """Median of `runs` timings for each backward form on the same measurement."""
    if runs < 1:
        raise ValueError(f"runs must be >= 1, got {runs}")
    model: SystemModel = build_system(generate_mask(dims, 0.5, seed), shear_step)
    rng = np.random.default_rng(seed)
    H, W, L = dims
    y = forward(model, rng.random((L, H, W)))
    # warm-up
    backward(model, y)
    two_stage_backward(model, y)
    result = BenchmarkResult(
        dims=tuple(dims),
        shear_step=shear_step,
        runs=runs,
        backward_median_s=_median_time(lambda: backward(model, y), runs),
        two_stage_median_s=_median_time(lambda: two_stage_backward(model, y), runs),
    )
    logger.info(
        "benchmark %s s=%d: backward %.4fs, two-stage %.4fs, speedup %.2fx",
        dims, shear_step, result.backward_median_s, result.two_stage_median_s, result.speedup,
    )
    return result


def render_benchmark(result: BenchmarkResult) -> Table:
    H, W, L = result.dims
    table = Table(title=f"Backward model, {H}x{W}x{L}, s={result.shear_step}, median of {result.runs}")
    table.add_column("Implementation")
    table.add_column("Median (ms)", justify="right")
    table.add_row("end-to-end backward", f"{result.backward_median_s * 1e3:.2f}")
    table.add_row("two-stage backward", f"{result.two_stage_median_s * 1e3:.2f}")
    table.add_row("speedup", f"{result.speedup:.2f}x", style="bold")
    return table


def print_benchmark(result: BenchmarkResult) -> None:
    Console().print(render_benchmark(result))
