"""
Unit tests for run configuration: defaults, TOML loading, environment and override precedence.
Run from project root: python -m unittest tests.test_config -v
"""

import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest import mock

from pydantic import ValidationError

# Project root on path
PROJECT_ROOT = Path(__file__).resolve().parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from config.schema import AdmmParams, FusionParams, RunConfig, load_run_config
from config.settings import DATA_DIR, SAMPLE_CONFIG_PATH

_CLEAN_ENV = {k: v for k, v in os.environ.items() if not k.startswith("CASSI_")}


class TestDefaults(unittest.TestCase):
    """Default values."""

    def test_admm_table(self):
        """ADMM defaults: rho 0.03, mu 0.015, tau 0.125, factor 1.2, K 30, N 10, 30 stages, refresh 10."""
        p = AdmmParams()
        self.assertEqual(
            (p.rho, p.mu, p.tau, p.stage_factor, p.inner_iters, p.iters_per_stage, p.num_stages, p.ref_update_interval),
            (0.03, 0.015, 0.125, 1.2, 30, 10, 30, 10),
        )
        self.assertEqual(p.order, "printed")
        self.assertTrue(p.warm_start)
        self.assertEqual(p.max_fusion_rounds, 4)

    def test_default_fusion_weight(self):
        """Stage-1 fusion weight is mu/rho and stays under the step bound."""
        with mock.patch.dict(os.environ, _CLEAN_ENV, clear=True):
            config = load_run_config()
        fp = config.fusion_params(1)
        self.assertAlmostEqual(fp.mu, 0.5)
        self.assertLess(fp.mu * fp.tau, 1.0 / 8.0)

    def test_sample_file_matches_defaults(self):
        """The shipped sample configuration equals the built-in defaults."""
        with mock.patch.dict(os.environ, _CLEAN_ENV, clear=True):
            self.assertEqual(load_run_config(SAMPLE_CONFIG_PATH), load_run_config())

    def test_output_dir_under_data_dir(self):
        """Runs write under <CASSI_DATA_DIR>/run unless an output directory is given."""
        with mock.patch.dict(os.environ, _CLEAN_ENV, clear=True):
            config = load_run_config()
        self.assertEqual(config.paths.output_dir, DATA_DIR / "run")

    def test_nodes_from_response_defaults_off(self):
        """Lifting uses the fixed channel nodes unless asked to read them from the response."""
        with mock.patch.dict(os.environ, _CLEAN_ENV, clear=True):
            self.assertFalse(load_run_config().nodes_from_response)
            self.assertTrue(load_run_config(overrides={"nodes_from_response": True}).nodes_from_response)


class TestValidation(unittest.TestCase):
    """Constraint checks."""

    def test_negative_rho(self):
        """rho must be positive."""
        with self.assertRaises(ValidationError):
            AdmmParams(rho=-1.0)

    def test_unknown_key(self):
        """Unknown keys are rejected."""
        with self.assertRaises(ValidationError):
            AdmmParams(step=0.1)

    def test_unknown_mode(self):
        """Mode must be one of the supported solvers."""
        with mock.patch.dict(os.environ, _CLEAN_ENV, clear=True):
            with self.assertRaises(ValidationError):
                load_run_config(overrides={"mode": "fista"})

    def test_fusion_bound_warning(self):
        """mu*tau at or above 1/8 warns but is accepted."""
        with self.assertLogs("config.schema", level="WARNING"):
            params = FusionParams(mu=0.5, tau=0.25)
        self.assertEqual(params.tau, 0.25)

    def test_missing_file(self):
        """A missing config file raises FileNotFoundError."""
        with self.assertRaises(FileNotFoundError):
            load_run_config(Path("/nonexistent/run.toml"))


class TestPrecedence(unittest.TestCase):
    """overrides > environment > TOML > defaults."""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.path = Path(self._tmp.name) / "run.toml"
        self.path.write_text('shear_step = 2\nmode = "tv_only"\n\n[admm]\nrho = 0.1\nmu = 0.02\n', encoding="utf-8")

    def tearDown(self):
        self._tmp.cleanup()

    def test_toml_over_defaults(self):
        """TOML values replace defaults; unspecified keys keep them."""
        with mock.patch.dict(os.environ, _CLEAN_ENV, clear=True):
            config = load_run_config(self.path)
        self.assertEqual(config.shear_step, 2)
        self.assertEqual(config.mode, "tv_only")
        self.assertEqual(config.admm.rho, 0.1)
        self.assertEqual(config.admm.tau, 0.125)

    def test_env_over_toml(self):
        """CASSI_* variables beat the file."""
        env = {**_CLEAN_ENV, "CASSI_SHEAR_STEP": "3"}
        with mock.patch.dict(os.environ, env, clear=True):
            config = load_run_config(self.path)
        self.assertEqual(config.shear_step, 3)

    def test_overrides_over_env(self):
        """Explicit overrides beat the environment."""
        env = {**_CLEAN_ENV, "CASSI_SHEAR_STEP": "3"}
        with mock.patch.dict(os.environ, env, clear=True):
            config = load_run_config(self.path, {"shear_step": 4, "admm": {"num_stages": 2}})
        self.assertEqual(config.shear_step, 4)
        self.assertEqual(config.admm.num_stages, 2)

    def test_file_does_not_leak(self):
        """A later load without a file sees only defaults."""
        with mock.patch.dict(os.environ, _CLEAN_ENV, clear=True):
            load_run_config(self.path)
            self.assertEqual(RunConfig().shear_step, 1)


if __name__ == "__main__":
    unittest.main()
