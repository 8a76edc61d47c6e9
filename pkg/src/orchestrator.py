"""
Orchestrator for the DC-CASSI pipeline.
Runs simulate -> reconstruct -> evaluate as file-to-file commands; every
command writes a manifest recording its parameters and input hashes so later
stages can check lineage.
"""

import logging
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from config.schema import RunConfig
from src import cube_io
from src.admm_tvds import reconstruct
from src.benchmark import BenchmarkResult, print_benchmark, run_benchmark
from src.cassi_model import SystemModel, build_system, simulate
from src.iteration_log import IterationLog
from src.metrics import (
    MetricReport,
    evaluate,
    per_band_frame,
    print_report,
    write_report_csv,
    write_report_text,
)
from src.reference import generate_reference
from src.rgb_model import default_response, demosaic_bilinear, load_response, mosaic_simulate, rgb_forward
from src.synthetic import generate_mask, generate_scene

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MEASUREMENT_NAME = "measurement.hsc"
MASK_NAME = "mask.hsc"
TRUTH_NAME = "truth.hsc"
RGB_RAW_NAME = "rgb_raw.hsc"
RGB_NAME = "rgb.hsc"
RESPONSE_NAME = "response.csv"
RECON_NAME = "reconstruction.hsc"
ITER_LOG_NAME = "iterations.csv"
PREVIEW_DIR = "previews"
EVAL_DIR = "evaluation"


def _require(path: Optional[Path], what: str) -> Path:
    if path is None:
        raise ValueError(f"{what} path is not set in the run configuration")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _load_transmittance(path: Path, bands: int) -> np.ndarray:
    """Mask file as (L, H, W); a single plane is replicated across bands."""
    mask = cube_io.read_cube(path)
    if mask.shape[0] == 1 and bands > 1:
        mask = np.repeat(mask, bands, axis=0)
    return mask


def _response(config: RunConfig, bands: int) -> np.ndarray:
    if config.paths.rgb_response is not None:
        return load_response(_require(config.paths.rgb_response, "Spectral response"), bands)
    return default_response(bands)


def simulation_dir(config: RunConfig) -> Path:
    """Configured simulation directory, else <output_dir>/simulation."""
    if config.paths.simulation_dir is not None:
        return Path(config.paths.simulation_dir)
    return Path(config.paths.output_dir) / "simulation"


def _hashes(paths: dict[str, Path]) -> dict[str, str]:
    return {name: cube_io.file_sha256(p) for name, p in sorted(paths.items())}


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(config: RunConfig) -> dict[str, Path]:
    """
    Simulate both camera branches from a scene and mask. Writes the CASSI
    measurement, the RGB frame (Bayer raw and demosaiced, or panchromatic),
    copies of truth and mask, the response used, and a manifest.
    """
    scene_path = _require(config.paths.scene, "Scene")
    mask_path = _require(config.paths.mask, "Mask")
    out_dir = simulation_dir(config)

    scene = cube_io.read_cube(scene_path)
    mask = _load_transmittance(mask_path, scene.shape[0])
    if mask.shape != scene.shape:
        raise ValueError(f"mask shape {mask.shape} does not match scene shape {scene.shape}")
    model = build_system(mask, config.shear_step)
    a = _response(config, model.bands)

    logger.info("simulate: scene %s, s=%d, seed=%d", model.dims, config.shear_step, config.seed)
    y = simulate(model, scene, config.noise.cassi_sigma, seed=config.seed)
    outputs = {
        "measurement": cube_io.write_cube(out_dir / MEASUREMENT_NAME, y),
        "truth": cube_io.write_cube(out_dir / TRUTH_NAME, scene),
        "mask": cube_io.write_cube(out_dir / MASK_NAME, mask),
    }
    # Separate stream so the RGB noise is independent of the CASSI noise
    rgb_seed = config.seed + 1
    if a.shape[0] == 3:
        raw = mosaic_simulate(a, scene, config.bayer_pattern, config.noise.rgb_sigma, seed=rgb_seed)
        outputs["rgb_raw"] = cube_io.write_cube(out_dir / RGB_RAW_NAME, raw)
        rgb = demosaic_bilinear(raw, config.bayer_pattern)
    else:
        rgb = rgb_forward(a, scene)
        if config.noise.rgb_sigma > 0:
            rgb = rgb + config.noise.rgb_sigma * np.random.default_rng(rgb_seed).standard_normal(rgb.shape)
    outputs["rgb"] = cube_io.write_cube(out_dir / RGB_NAME, rgb)
    response_path = out_dir / RESPONSE_NAME
    np.savetxt(response_path, a, delimiter=",", fmt="%.17g")
    outputs["response"] = response_path

    H, W, L = model.dims
    manifest = {
        "command": "simulate",
        "config": config.model_dump(mode="json"),
        "dims": {"H": H, "W": W, "L": L},
        "shear_step": config.shear_step,
        "measurement_shape": list(y.shape),
        "inputs": _hashes({"scene": scene_path, "mask": mask_path}),
        "outputs": _hashes(outputs),
        "truth_sha256": cube_io.file_sha256(outputs["truth"]),
    }
    outputs["manifest"] = cube_io.write_manifest(out_dir / MANIFEST_NAME, manifest)
    logger.info("simulate: wrote %d files to %s", len(outputs), out_dir)
    return outputs


# ---------------------------------------------------------------------------
# reconstruct
# ---------------------------------------------------------------------------


def cmd_reconstruct(config: RunConfig) -> dict[str, Path]:
    """
    Reconstruct from a simulation directory. Writes the reconstruction, the
    per-iteration CSV log, band previews and a manifest embedding the
    simulation manifest unchanged.
    """
    sim_dir = _require(config.paths.simulation_dir, "Simulation directory")
    out_dir = Path(config.paths.output_dir)
    sim_manifest = cube_io.read_manifest(sim_dir / MANIFEST_NAME)

    y = cube_io.read_plane(sim_dir / MEASUREMENT_NAME)
    mask = cube_io.read_cube(_require(sim_dir / MASK_NAME, "Mask"))
    recorded = sim_manifest.get("shear_step")
    if recorded is not None and recorded != config.shear_step:
        raise ValueError(
            f"shear step {config.shear_step} does not match the simulation (s={recorded}); "
            f"pass --shear-step {recorded}"
        )
    model: SystemModel = build_system(mask, config.shear_step)

    rgb = None
    bundle = None
    if config.mode != "tv_only":
        rgb_path = sim_dir / RGB_NAME
        if not rgb_path.exists():
            raise ValueError(f"mode {config.mode!r} needs an RGB frame; none found at {rgb_path}")
        y_r = cube_io.read_cube(rgb_path)
        response_path = config.paths.rgb_response or (sim_dir / RESPONSE_NAME)
        a = load_response(response_path, model.bands) if Path(response_path).exists() else default_response(model.bands, y_r.shape[0])
        if a.shape[0] != y_r.shape[0]:
            raise ValueError(f"response has {a.shape[0]} rows but the RGB frame has {y_r.shape[0]} channels")
        bundle = generate_reference(
            model, y, y_r, a=a, lift=config.lift, nodes_from_response=config.nodes_from_response,
        )
        rgb = (a, y_r)

    log = IterationLog()
    logger.info(
        "reconstruct: mode=%s, %d stages x %d iterations, K=%d",
        config.mode, config.admm.num_stages, config.admm.iters_per_stage, config.admm.inner_iters,
    )
    x = reconstruct(model, y, bundle, config.admm, rgb=rgb, mode=config.mode, callbacks=[log])

    outputs = {
        "reconstruction": cube_io.write_cube(out_dir / RECON_NAME, x),
        "iterations": log.write_csv(out_dir / ITER_LOG_NAME),
    }
    previews = cube_io.write_band_previews(x, out_dir / PREVIEW_DIR)
    manifest = {
        "command": "reconstruct",
        "config": config.model_dump(mode="json"),
        "simulation": sim_manifest,
        "simulation_manifest_sha256": cube_io.file_sha256(sim_dir / MANIFEST_NAME),
        "truth_sha256": sim_manifest.get("truth_sha256"),
        "outputs": _hashes(outputs),
        "previews": len(previews),
        "beta": None if bundle is None or bundle.beta is None else [float(b) for b in bundle.beta],
    }
    outputs["manifest"] = cube_io.write_manifest(out_dir / MANIFEST_NAME, manifest)
    logger.info("reconstruct: wrote %s (%d log rows)", outputs["reconstruction"], len(log))
    return outputs


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def check_lineage(recon_path: Path, truth_path: Path, force: bool = False) -> None:
    """Refuse a reconstruction whose manifest does not name this truth file, unless forced."""
    manifest_path = recon_path.parent / MANIFEST_NAME
    recorded: Any = None
    if manifest_path.exists():
        recorded = cube_io.read_manifest(manifest_path).get("truth_sha256")
    actual = cube_io.file_sha256(truth_path)
    if recorded == actual:
        return
    reason = "no lineage recorded" if recorded is None else "lineage mismatch"
    message = f"{recon_path}: {reason} against truth {truth_path}"
    if not force:
        raise ValueError(message + " (use --force to evaluate anyway)")
    logger.warning("%s; evaluating anyway (--force)", message)


def cmd_evaluate(
    recon_paths: Sequence[Path],
    truth_paths: Sequence[Path],
    out_dir: Path,
    peak: str = "reference_max",
    force: bool = False,
    scene_names: Optional[Sequence[str]] = None,
) -> list[MetricReport]:
    """PSNR / SSIM / SAM per scene plus an Avg row, written as CSV and text."""
    if len(recon_paths) != len(truth_paths):
        raise ValueError(f"{len(recon_paths)} reconstructions but {len(truth_paths)} truths")
    out_dir = Path(out_dir)
    reports = []
    for index, (recon_path, truth_path) in enumerate(zip(recon_paths, truth_paths)):
        recon_path, truth_path = Path(recon_path), Path(truth_path)
        check_lineage(recon_path, truth_path, force)
        scene = scene_names[index] if scene_names else recon_path.parent.name or f"scene{index + 1}"
        report = evaluate(cube_io.read_cube(recon_path), cube_io.read_cube(truth_path), scene=scene, peak=peak)
        out_dir.mkdir(parents=True, exist_ok=True)
        per_band_frame(report).to_csv(out_dir / f"per_band_{scene}.csv", index=False, float_format="%.17g")
        logger.info("evaluate %s: PSNR %.2f dB, SSIM %.4f, SAM %.2f deg", scene, report.psnr_db, report.ssim, report.sam_degrees)
        reports.append(report)
    write_report_csv(reports, out_dir / "metrics.csv")
    write_report_text(reports, out_dir / "metrics.txt")
    print_report(reports)
    return reports


# ---------------------------------------------------------------------------
# synthetic data, conversion, benchmark
# ---------------------------------------------------------------------------


def cmd_genscene(kind: str, dims: tuple[int, int, int], seed: int, out: Path) -> Path:
    path = cube_io.write_cube(out, generate_scene(kind, dims, seed))
    logger.info("genscene: %s %s seed=%d -> %s", kind, dims, seed, path)
    return path


def cmd_genmask(dims: tuple[int, int, int], density: float, seed: int, out: Path) -> Path:
    path = cube_io.write_cube(out, generate_mask(dims, density, seed))
    logger.info("genmask: %s density=%.3g seed=%d -> %s", dims, density, seed, path)
    return path


def cmd_convert(src: Path, dst: Path, var_name: Optional[str] = None, dtype: str = "f64") -> Path:
    return cube_io.convert(src, dst, var_name=var_name, dtype=dtype)


def cmd_benchmark(dims: tuple[int, int, int], shear_step: int, runs: int, seed: int) -> BenchmarkResult:
    result = run_benchmark(dims, shear_step, runs, seed)
    print_benchmark(result)
    return result


def run_pipeline(config: RunConfig, force: bool = False) -> list[MetricReport]:
    """simulate -> reconstruct -> evaluate for one configured scene."""
    sim_dir = simulation_dir(config)
    config = config.model_copy(update={"paths": config.paths.model_copy(update={"simulation_dir": sim_dir})})
    logger.info("Step 1: simulate")
    sim_outputs = cmd_simulate(config)
    logger.info("Step 2: reconstruct")
    rec_outputs = cmd_reconstruct(config)
    logger.info("Step 3: evaluate")
    return cmd_evaluate(
        [rec_outputs["reconstruction"]],
        [sim_outputs["truth"]],
        Path(config.paths.output_dir) / EVAL_DIR,
        peak=config.peak,
        force=force,
    )
