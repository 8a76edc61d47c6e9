"""
Entry point: command-line surface for the DC-CASSI toolkit.
Subcommands simulate, reconstruct, evaluate, run, genscene, genmask, convert
and benchmark. Exit codes: 0 success, 2 validation failure, 3 numerical failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

# Ensure project root is on path when running as script
_PROJECT_ROOT = Path(__file__).resolve().parent.parent
if str(_PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(_PROJECT_ROOT))

from config.schema import BAYER_PATTERNS, MODES, SCENE_KINDS, RunConfig, load_run_config
from config.settings import DEFAULT_SEED, LOG_LEVEL, validate_settings
from src import orchestrator
from src.rgb_model import NumericalFailure

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _configure_logging() -> None:
    logging.basicConfig(
        level=LOG_LEVEL,
        format="%(asctime)s [%(levelname)s] %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        handlers=[logging.StreamHandler(sys.stdout)],
    )


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    """Flags that override keys of the run configuration."""
    parser.add_argument("--config", type=Path, help="TOML run configuration")
    parser.add_argument("--scene", type=Path)
    parser.add_argument("--mask", type=Path)
    parser.add_argument("--rgb-response", type=Path, help="CSV, C rows x L columns")
    parser.add_argument("--sim-dir", type=Path, help="simulation directory (output of simulate, input of reconstruct)")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--shear-step", type=int)
    parser.add_argument("--cassi-sigma", type=float)
    parser.add_argument("--rgb-sigma", type=float)
    parser.add_argument("--mode", choices=MODES)
    parser.add_argument("--bayer-pattern", choices=BAYER_PATTERNS)
    parser.add_argument("--lift", choices=("interpolate", "pinv"))
    parser.add_argument("--nodes-from-response", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--peak", choices=("reference_max", "unit"))
    parser.add_argument("--seed", type=int)
    parser.add_argument("--rho", type=float)
    parser.add_argument("--mu", type=float)
    parser.add_argument("--tau", type=float)
    parser.add_argument("--inner-iters", type=int, help="fixed-point sweeps K")
    parser.add_argument("--iters-per-stage", type=int, help="ADMM iterations N per stage")
    parser.add_argument("--num-stages", type=int)
    parser.add_argument("--ref-update-interval", type=int)
    parser.add_argument("--order", choices=("printed", "conventional"))
    parser.add_argument("--warm-start", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--max-fusion-rounds", type=int, help="blocks of K sweeps a Z-step may use to descend")


_TOP_LEVEL = {
    "shear_step": "shear_step",
    "mode": "mode",
    "bayer_pattern": "bayer_pattern",
    "lift": "lift",
    "nodes_from_response": "nodes_from_response",
    "peak": "peak",
    "seed": "seed",
}
_PATHS = {"scene": "scene", "mask": "mask", "rgb_response": "rgb_response", "sim_dir": "simulation_dir", "out": "output_dir"}
_NOISE = {"cassi_sigma": "cassi_sigma", "rgb_sigma": "rgb_sigma"}
_ADMM = {
    "rho": "rho",
    "mu": "mu",
    "tau": "tau",
    "inner_iters": "inner_iters",
    "iters_per_stage": "iters_per_stage",
    "num_stages": "num_stages",
    "ref_update_interval": "ref_update_interval",
    "order": "order",
    "warm_start": "warm_start",
    "max_fusion_rounds": "max_fusion_rounds",
}


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    """Nested override dict holding only the flags that were given."""
    out: dict[str, Any] = {}

    def pick(mapping: dict[str, str]) -> dict[str, Any]:
        return {key: getattr(args, flag) for flag, key in mapping.items() if getattr(args, flag, None) is not None}

    out.update(pick(_TOP_LEVEL))
    for section, mapping in (("paths", _PATHS), ("noise", _NOISE), ("admm", _ADMM)):
        values = pick(mapping)
        if values:
            out[section] = values
    return out


def _run_config(args: argparse.Namespace) -> RunConfig:
    return load_run_config(args.config, _overrides(args))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cassi", description="Dual-camera CASSI simulation and ADMM-TVDS reconstruction")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("simulate", "simulate CASSI and RGB measurements from a scene and mask"),
        ("reconstruct", "reconstruct a cube from a simulation directory"),
        ("run", "simulate, reconstruct and evaluate in one go"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_run_options(p)
        if name == "run":
            p.add_argument("--force", action="store_true", help="evaluate despite a lineage mismatch")

    p = sub.add_parser("evaluate", help="PSNR / SSIM / SAM of reconstructions against ground truth")
    p.add_argument("--recon", type=Path, nargs="+", required=True)
    p.add_argument("--truth", type=Path, nargs="+", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--scene-names", nargs="+")
    p.add_argument("--peak", choices=("reference_max", "unit"), default="reference_max")
    p.add_argument("--force", action="store_true", help="evaluate despite a lineage mismatch")

    p = sub.add_parser("genscene", help="write a synthetic scene")
    p.add_argument("--kind", choices=SCENE_KINDS, default="piecewise")
    p.add_argument("--dims", type=int, nargs=3, metavar=("H", "W", "L"), required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("genmask", help="write a Bernoulli coded-aperture mask")
    p.add_argument("--dims", type=int, nargs=3, metavar=("H", "W", "L"), required=True)
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("convert", help="convert between .hsc and .npy / .mat")
    p.add_argument("src", type=Path)
    p.add_argument("dst", type=Path)
    p.add_argument("--var", help="MATLAB variable name")
    p.add_argument("--dtype", choices=("f32", "f64"), default="f64")

    p = sub.add_parser("benchmark", help="time backward against the two-stage backward model")
    p.add_argument("--dims", type=int, nargs=3, metavar=("H", "W", "L"), default=[256, 256, 28])
    p.add_argument("--shear-step", type=int, default=2)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    return parser


def _dispatch(args: argparse.Namespace) -> None:
    if args.command == "simulate":
        orchestrator.cmd_simulate(_run_config(args))
    elif args.command == "reconstruct":
        orchestrator.cmd_reconstruct(_run_config(args))
    elif args.command == "run":
        orchestrator.run_pipeline(_run_config(args), force=args.force)
    elif args.command == "evaluate":
        orchestrator.cmd_evaluate(args.recon, args.truth, args.out, peak=args.peak, force=args.force, scene_names=args.scene_names)
    elif args.command == "genscene":
        orchestrator.cmd_genscene(args.kind, tuple(args.dims), args.seed, args.out)
    elif args.command == "genmask":
        orchestrator.cmd_genmask(tuple(args.dims), args.density, args.seed, args.out)
    elif args.command == "convert":
        orchestrator.cmd_convert(args.src, args.dst, var_name=args.var, dtype=args.dtype)
    elif args.command == "benchmark":
        orchestrator.cmd_benchmark(tuple(args.dims), args.shear_step, args.runs, args.seed)


def main(argv: Optional[Sequence[str]] = None) -> int:
    validate_settings()
    _configure_logging()
    args = build_parser().parse_args(argv)
    debug = logger.isEnabledFor(logging.DEBUG)
    try:
        _dispatch(args)
    except NumericalFailure as e:
        logger.error("numerical failure: %s", e, exc_info=debug)
        return EXIT_NUMERICAL
    except (ValueError, FileNotFoundError) as e:
        logger.error("%s", e, exc_info=debug)
        return EXIT_VALIDATION
    logger.info("%s: done", args.command)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
