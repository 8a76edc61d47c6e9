"""
Process-level settings loaded from environment.
Run parameters (solver, noise, paths) live in config/schema.py; this module only
holds knobs that apply to every command.
"""

import logging
import os
from pathlib import Path

from dotenv import load_dotenv

# Load .env from project root
PROJECT_ROOT = Path(__file__).resolve().parent.parent
load_dotenv(PROJECT_ROOT / ".env")

# Root for the sample config and the default run output directory
DATA_DIR = Path(os.getenv("CASSI_DATA_DIR", str(PROJECT_ROOT / "data")))
SAMPLE_CONFIG_PATH = DATA_DIR / "run_config.toml"

LOG_LEVEL = os.getenv("CASSI_LOG_LEVEL", "INFO").strip().upper()

# When True: CG non-convergence in the dual-camera solves is fatal (exit code 3)
CG_STRICT = os.getenv("CASSI_CG_STRICT", "").strip().lower() in ("true", "1", "yes")

DEFAULT_SEED = int(os.getenv("CASSI_DEFAULT_SEED", "0"))

# Opt-in for wall-clock tests
RUN_BENCHMARKS = os.getenv("CASSI_RUN_BENCHMARKS", "").strip().lower() in ("true", "1", "yes")


def validate_settings() -> None:
    """Raise if LOG_LEVEL is not a standard logging level name."""
    # logging.getLevelNamesMapping() is 3.11+; it returns a copy of _nameToLevel
    level_names = (
        logging.getLevelNamesMapping()
        if hasattr(logging, "getLevelNamesMapping")
        else dict(logging._nameToLevel)
    )
    if LOG_LEVEL not in level_names:
        raise ValueError(
            f"CASSI_LOG_LEVEL={LOG_LEVEL!r} is not a logging level. "
            "Use one of DEBUG, INFO, WARNING, ERROR."
        )
