"""
Unit tests for the staged ADMM-TVDS driver: step functions against dense algebra,
loop bookkeeping, reference refreshes and reconstruction quality.
Run from project root: python -m unittest tests.test_admm_tvds -v
"""

import sys
import unittest
from pathlib import Path

import numpy as np

# Project root on path
PROJECT_ROOT = Path(__file__).resolve().parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from config.schema import AdmmParams, stage_schedule
from src.admm_tvds import (
    OperationCounter,
    reconstruct,
    u_update,
    x_update,
    z_update,
)
from src.cassi_model import adjoint, backward, build_system, forward
from src.iteration_log import IterationLog
from src.metrics import psnr
from src.reference import generate_reference, reference_from_cube
from src.rgb_model import default_response, dual_backward, rgb_adjoint, rgb_forward
from src.synthetic import generate_mask, piecewise_scene
from src.tvds_fusion import euler_lagrange_residual, objective
from tests.oracles import dense_x_update, explicit_phi, smooth_cube


def _problem(dims=(16, 16, 4), shear_step=1, seed=0):
    truth, _ = piecewise_scene(dims, seed=seed)
    model = build_system(generate_mask(dims, 0.5, seed=seed), shear_step)
    return model, truth, forward(model, truth)


class TestSteps(unittest.TestCase):
    """Individual ADMM updates."""

    def test_x_update_matches_dense(self):
        """Woodbury X-step equals (Phi^T Phi + rho I)^-1 (Phi^T y + rho (Z - U)), 20 random trials."""
        for trial in range(20):
            rng = np.random.default_rng(trial)
            model = build_system(rng.random((3, 4, 4)), trial % 3)
            y = rng.random(model.measurement_shape)
            z, u = rng.random((3, 4, 4)), 0.1 * rng.standard_normal((3, 4, 4))
            rho = (0.03, 1.0)[trial % 2]
            expected = dense_x_update(explicit_phi(model), y, z - u, rho)
            got = x_update(model, y, z, u, rho).ravel()
            self.assertLessEqual(np.linalg.norm(got - expected), 1e-9 * np.linalg.norm(expected))

    def test_x_update_large_rho(self):
        """rho -> infinity returns Z - U."""
        rng = np.random.default_rng(1)
        model = build_system(rng.random((3, 4, 5)), 2)
        y = rng.random(model.measurement_shape)
        z, u = rng.random((3, 4, 5)), rng.random((3, 4, 5))
        np.testing.assert_allclose(x_update(model, y, z, u, 1e12), z - u, atol=1e-6)

    def test_x_update_rejects_nonpositive_rho(self):
        """rho <= 0 raises ValueError."""
        model = build_system(np.ones((2, 3, 3)), 1)
        with self.assertRaises(ValueError):
            x_update(model, np.zeros(model.measurement_shape), np.zeros((2, 3, 3)), np.zeros((2, 3, 3)), 0.0)

    def test_u_update(self):
        """U + X - Z exactly."""
        rng = np.random.default_rng(2)
        u, x, z = (rng.random((2, 3, 3)) for _ in range(3))
        np.testing.assert_array_equal(u_update(u, x, z), u + x - z)

    def test_z_update_is_converged_fusion(self):
        """With many sweeps the Z-step satisfies its Euler-Lagrange relation."""
        x = smooth_cube((2, 10, 10), seed=3)
        u = np.zeros_like(x)
        rho, mu, tau = 1.0, 0.02, 6.0
        z, p = z_update(x, u, None, rho, mu, tau, inner_iters=2000)
        residual = euler_lagrange_residual(x + u, z, p, None, mu / rho, tau)
        self.assertLessEqual(residual, 1e-5 * np.linalg.norm(x + u))

    def test_z_update_never_ascends(self):
        """Given the previous Z, the step never raises its subproblem objective, for one or several rounds."""
        rho, mu, tau = 1.0, 0.02, 6.0
        for seed in range(4):
            x = smooth_cube((2, 10, 10), seed=seed)
            u = 0.01 * np.random.default_rng(seed).standard_normal(x.shape)
            p_ref = reference_from_cube(smooth_cube((2, 10, 10), seed=seed + 10)).p_ref
            # a near-optimal previous Z that two cold sweeps cannot match
            z_good, _ = z_update(x, u, p_ref, rho, mu, tau, inner_iters=2000)
            for z_prev in (x + u, z_good):
                target = objective(x + u, z_prev, p_ref, mu / rho)
                for rounds in (1, 4):
                    z, _ = z_update(x, u, p_ref, rho, mu, tau, inner_iters=2, z_prev=z_prev, max_rounds=rounds)
                    self.assertLessEqual(objective(x + u, z, p_ref, mu / rho), target)

    def test_z_update_counts_extra_rounds(self):
        """Sweeps are tallied per round actually run, between K and max_rounds * K."""
        x = smooth_cube((2, 10, 10), seed=5)
        u = np.zeros_like(x)
        z_good, _ = z_update(x, u, None, 1.0, 0.02, 6.0, inner_iters=2000)
        counter = OperationCounter()
        z_update(x, u, None, 1.0, 0.02, 6.0, inner_iters=2, counter=counter, z_prev=z_good, max_rounds=3)
        self.assertIn(counter.sweeps, (2, 4, 6))

    def test_z_update_rejects_zero_rounds(self):
        """max_rounds below one raises ValueError."""
        x = np.zeros((2, 3, 3))
        with self.assertRaises(ValueError):
            z_update(x, x, None, 1.0, 0.1, 0.1, inner_iters=1, max_rounds=0)


class TestSchedule(unittest.TestCase):
    """Per-stage mu and tau."""

    def test_product_invariant(self):
        """mu_n * tau_n is the same at every stage."""
        params = AdmmParams()
        base = params.mu * params.tau
        for stage in range(1, params.num_stages + 1):
            mu, tau = stage_schedule(params, stage)
            self.assertAlmostEqual(mu * tau, base, delta=1e-12 * base)

    def test_first_stage_unscaled(self):
        """Stage 1 uses the configured mu and tau."""
        params = AdmmParams(mu=0.2, tau=0.3)
        self.assertEqual(stage_schedule(params, 1), (0.2, 0.3))

    def test_stage_zero_rejected(self):
        """Stages are 1-based."""
        with self.assertRaises(ValueError):
            stage_schedule(AdmmParams(), 0)


class TestLoop(unittest.TestCase):
    """Driver bookkeeping."""

    def test_degenerate_loop_is_one_x_update(self):
        """One stage, one iteration and mu = 0 reduce to x_update(backward(y), 0)."""
        model, _, y = _problem(dims=(8, 8, 3))
        params = AdmmParams(mu=0.0, num_stages=1, iters_per_stage=1)
        x = reconstruct(model, y, params=params, mode="tv_only")
        x0 = backward(model, y)
        np.testing.assert_allclose(x, x_update(model, y, x0, np.zeros_like(x0), params.rho), rtol=1e-14, atol=0)

    def test_record_count(self):
        """One record per ADMM iteration, stage-major."""
        model, truth, y = _problem(dims=(8, 8, 3))
        log = IterationLog()
        params = AdmmParams(num_stages=3, iters_per_stage=4, inner_iters=5)
        reconstruct(model, y, truth, params=params, callbacks=[log])
        self.assertEqual(len(log), 12)
        frame = log.to_frame()
        self.assertEqual(frame["stage"].tolist(), [1] * 4 + [2] * 4 + [3] * 4)
        self.assertEqual(frame["iteration"].tolist(), [1, 2, 3, 4] * 3)

    def test_lrds_refresh_flags(self):
        """With an RGB frame the reference is refreshed at the end of every interval stage but the last."""
        dims = (8, 8, 4)
        model, truth, y = _problem(dims=dims)
        a = default_response(4)
        y_r = rgb_forward(a, truth)
        log = IterationLog()
        params = AdmmParams(num_stages=3, iters_per_stage=2, inner_iters=3, ref_update_interval=1)
        reconstruct(model, y, generate_reference(model, y, y_r), params=params, rgb=(a, y_r), callbacks=[log])
        flagged = [(r.stage, r.iteration) for r in log.records if r.reference_refreshed]
        self.assertEqual(flagged, [(1, 2), (2, 2)])

    def test_no_refresh_without_rgb(self):
        """A bare reference cube is never refreshed."""
        model, truth, y = _problem(dims=(8, 8, 3))
        log = IterationLog()
        params = AdmmParams(num_stages=3, iters_per_stage=2, inner_iters=3, ref_update_interval=1)
        reconstruct(model, y, truth, params=params, callbacks=[log])
        self.assertFalse(any(r.reference_refreshed for r in log.records))

    def test_operation_count_scales_linearly(self):
        """Doubling any one dimension at most doubles the operation count."""
        params = AdmmParams(num_stages=1, iters_per_stage=2, inner_iters=3, max_fusion_rounds=1)

        def count(dims):
            model, _, y = _problem(dims=dims)
            counter = OperationCounter()
            reconstruct(model, y, params=params, mode="tv_only", counter=counter)
            return counter.total

        base = count((8, 8, 4))
        for dims in ((16, 8, 4), (8, 16, 4), (8, 8, 8)):
            ratio = count(dims) / base
            self.assertGreater(ratio, 1.5)
            self.assertLessEqual(ratio, 2.0 + 1e-12)

    def test_counter_tallies_sweeps(self):
        """With one fusion round every Z-step adds exactly inner_iters sweeps."""
        model, _, y = _problem(dims=(8, 8, 3))
        counter = OperationCounter()
        params = AdmmParams(num_stages=2, iters_per_stage=3, inner_iters=4, max_fusion_rounds=1)
        reconstruct(model, y, params=params, mode="tv_only", counter=counter)
        self.assertEqual(counter.sweeps, 2 * 3 * 4)

    def test_merit_rises_only_by_multiplier_step(self):
        """Within a stage the merit grows by at most rho ||X - Z||^2 per iteration, the U-step's share."""
        model, truth, y = _problem(dims=(12, 12, 4))
        for warm in (True, False):
            log = IterationLog()
            params = AdmmParams(
                num_stages=1, iters_per_stage=40, inner_iters=10, order="conventional", warm_start=warm,
            )
            reconstruct(model, y, truth, params=params, callbacks=[log])
            for before, after in zip(log.records, log.records[1:]):
                bound = before.merit + params.rho * after.primal_residual ** 2
                self.assertLessEqual(after.merit, bound + 1e-9 * max(1.0, abs(bound)))

    def test_orders_and_warm_start_run(self):
        """Conventional order and warm start both produce finite images better than backward."""
        model, truth, y = _problem(dims=(12, 12, 4))
        start = psnr(backward(model, y), truth)
        for order, warm in (("conventional", False), ("printed", True)):
            params = AdmmParams(num_stages=3, iters_per_stage=5, order=order, warm_start=warm)
            x = reconstruct(model, y, params=params, mode="tv_only")
            self.assertTrue(np.all(np.isfinite(x)))
            self.assertGreater(psnr(x, truth), start)

    def test_tvds_star_runs(self):
        """The stacked dual-camera mode returns a finite cube of the right shape."""
        dims = (8, 8, 4)
        model, truth, y = _problem(dims=dims)
        a = default_response(4)
        y_r = rgb_forward(a, truth)
        params = AdmmParams(num_stages=2, iters_per_stage=2, inner_iters=5)
        x = reconstruct(model, y, generate_reference(model, y, y_r), params=params, rgb=(a, y_r), mode="tvds_star")
        self.assertEqual(x.shape, truth.shape)
        self.assertTrue(np.all(np.isfinite(x)))

    def test_missing_reference(self):
        """tvds without a reference raises ValueError."""
        model, _, y = _problem(dims=(8, 8, 3))
        with self.assertRaises(ValueError):
            reconstruct(model, y, None, mode="tvds")

    def test_tvds_star_needs_rgb(self):
        """tvds_star without an RGB frame raises ValueError."""
        model, truth, y = _problem(dims=(8, 8, 3))
        with self.assertRaises(ValueError):
            reconstruct(model, y, truth, mode="tvds_star")

    def test_unknown_mode(self):
        """An unknown mode raises ValueError."""
        model, truth, y = _problem(dims=(8, 8, 3))
        with self.assertRaises(ValueError):
            reconstruct(model, y, truth, mode="fista")

    def test_reference_dims_checked(self):
        """A reference cube of the wrong size raises ValueError."""
        model, _, y = _problem(dims=(8, 8, 3))
        with self.assertRaises(ValueError):
            reconstruct(model, y, np.zeros((3, 8, 9)))


class TestDualCameraAndOrder(unittest.TestCase):
    """Stacked dual-camera X-step and the two update orders."""

    def setUp(self):
        self.model, self.truth, self.y = _problem(dims=(8, 8, 4))
        self.a = default_response(4)
        self.y_r = rgb_forward(self.a, self.truth)

    def test_tvds_star_step_solves_stacked_system(self):
        """With mu = 0 one iteration returns the regularized dual-camera solution around its start."""
        params = AdmmParams(mu=0.0, num_stages=1, iters_per_stage=1)
        x = reconstruct(self.model, self.y, self.truth, params=params, rgb=(self.a, self.y_r), mode="tvds_star")
        x0 = dual_backward(
            self.model, self.a, self.y, self.y_r, cg_tol=params.dual_cg_tol, cg_max_iter=params.dual_cg_max_iter,
        ).x
        rho = params.rho
        lhs = adjoint(self.model, forward(self.model, x)) + rgb_adjoint(self.a, rgb_forward(self.a, x)) + rho * x
        rhs = adjoint(self.model, self.y) + rgb_adjoint(self.a, self.y_r) + rho * x0
        self.assertLessEqual(np.linalg.norm(lhs - rhs), 1e-6 * np.linalg.norm(rhs))

    def test_tvds_star_fits_rgb_frame_better(self):
        """The stacked X-step fits the RGB frame more closely than the single-camera X-step."""
        params = AdmmParams(num_stages=2, iters_per_stage=3, inner_iters=5)
        bundle = generate_reference(self.model, self.y, self.y_r)
        rgb = (self.a, self.y_r)
        single = reconstruct(self.model, self.y, bundle, params=params, rgb=rgb, mode="tvds")
        stacked = reconstruct(self.model, self.y, bundle, params=params, rgb=rgb, mode="tvds_star")
        misfit = [np.linalg.norm(rgb_forward(self.a, x) - self.y_r) for x in (single, stacked)]
        self.assertLess(misfit[1], misfit[0])

    def test_orders_differ_after_one_iteration(self):
        """Conventional order keeps the consistent start; printed order moves it by the fused Z."""
        base = dict(num_stages=1, iters_per_stage=1, inner_iters=10)
        conventional = reconstruct(
            self.model, self.y, params=AdmmParams(order="conventional", **base), mode="tv_only",
        )
        printed_params = AdmmParams(order="printed", **base)
        printed = reconstruct(self.model, self.y, params=printed_params, mode="tv_only")

        x0 = backward(self.model, self.y)
        rho = printed_params.rho
        np.testing.assert_allclose(conventional, x0, rtol=0, atol=1e-10 * np.linalg.norm(x0))
        z1, _ = z_update(
            x0, np.zeros_like(x0), None, rho, printed_params.mu, printed_params.tau, printed_params.inner_iters,
            z_prev=x0, max_rounds=printed_params.max_fusion_rounds,
        )
        expected = x_update(self.model, self.y, z1, x0 - z1, rho)
        np.testing.assert_allclose(printed, expected, rtol=1e-12, atol=1e-12)
        self.assertGreater(np.linalg.norm(printed - conventional), 1e-6 * np.linalg.norm(x0))


class TestQuality(unittest.TestCase):
    """Reconstruction quality on piecewise-constant scenes."""

    def test_oracle_reference_beats_tv(self):
        """Guidance by the true scene gains at least 2 dB over plain TV."""
        model, truth, y = _problem(dims=(32, 32, 4), seed=1)
        tv = reconstruct(model, y, mode="tv_only")
        guided = reconstruct(model, y, reference_from_cube(truth))
        self.assertGreaterEqual(psnr(guided, truth), psnr(tv, truth) + 2.0)

    def test_tv_improves_on_backward(self):
        """Plain TV reconstruction beats the minimum-norm estimate."""
        model, truth, y = _problem(dims=(24, 24, 4), seed=2)
        tv = reconstruct(model, y, mode="tv_only", params=AdmmParams(num_stages=5))
        self.assertGreater(psnr(tv, truth), psnr(backward(model, y), truth))


class TestEndToEnd(unittest.TestCase):
    """64x64x8 piecewise scene, mask density 0.5, s = 1, noiseless, default parameters."""

    @classmethod
    def setUpClass(cls):
        cls.model, cls.truth, cls.y = _problem(dims=(64, 64, 8), seed=0)
        cls.a = default_response(8)
        cls.y_r = rgb_forward(cls.a, cls.truth)
        cls.tv = reconstruct(cls.model, cls.y, mode="tv_only")
        cls.tv_psnr = psnr(cls.tv, cls.truth)

    def test_oracle_reference(self):
        """Oracle-guided TVDS gains at least 2 dB over TV-only."""
        x = reconstruct(self.model, self.y, reference_from_cube(self.truth))
        self.assertGreaterEqual(psnr(x, self.truth), self.tv_psnr + 2.0)

    def test_rgb_reference(self):
        """An RGB-generated reference gains at least 1 dB over TV-only and converges."""
        log = IterationLog()
        bundle = generate_reference(self.model, self.y, self.y_r)
        x = reconstruct(self.model, self.y, bundle, rgb=(self.a, self.y_r), callbacks=[log])
        self.assertGreaterEqual(psnr(x, self.truth), self.tv_psnr + 1.0)
        last = log.records[-1]
        self.assertLessEqual(last.primal_residual, 1e-3 * np.linalg.norm(x))


if __name__ == "__main__":
    unittest.main()
