import math
import os
import tempfile
import unittest

import numpy as np

from kernels import (solve_observer_kernel, solve_direct_kernel, goursat_data, seed, direct_transform,
                     inverse_transform, reciprocity_residual, evaluate_p1, save_kernel_table, load_kernel_table,
                     cache_path, observer_kernel, build_phi)
from model import BiophysicalParams, GainConfig, steady_state_profile, linearize
from utils import ConvergenceError, KernelDomainError
from verify import stress_params, STRESS_GAINS

L_BAR = 24e-6


class TestSeed(unittest.TestCase):
    def test_seed_meets_characteristic_condition(self):
        params = BiophysicalParams.nominal()
        for kind in ("P", "Q"):
            data = goursat_data(params, 0.05, 1e4, kind)
            xi = np.linspace(0.0, 2 * L_BAR, 5)
            np.testing.assert_allclose(seed(data, xi, 0.0), data.mu * xi + 1e4)


class TestNominalKernels(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        params = BiophysicalParams.nominal()
        cls.params = params
        cls.P = solve_observer_kernel(params, 0.05, 1e4, L_BAR, grid_n=65)
        cls.Q = solve_direct_kernel(params, 0.05, 1e4, L_BAR, grid_n=65)

    def test_diagonal_condition(self):
        x = self.P.grid
        expected = 0.05 * x / (2.0 * self.params.D) + 1e4
        np.testing.assert_allclose(np.diag(self.P.values), expected, rtol=1e-12)
        np.testing.assert_allclose(np.diag(self.Q.values), expected, rtol=1e-12)

    def test_observer_kernel_boundary_residuals(self):
        report = self.P.residual_report
        self.assertLess(report["diagonal"], 1e-8)
        self.assertLess(report["neumann"], 1e-8)
        self.assertLess(report["pde"], 1e-5)

    def test_direct_kernel_neumann_residual(self):
        self.assertLess(self.Q.residual_report["neumann"], 1e-4)

    def test_series_bounds_hold(self):
        self.assertTrue(self.P.residual_report["bound_terms_ok"])
        self.assertTrue(self.P.residual_report["bound_ok"])

    def test_lower_triangle_is_empty(self):
        self.assertTrue(np.isnan(self.P.values[3, 1]))

    def test_reciprocity(self):
        self.assertLess(reciprocity_residual(self.P, self.Q), 1e-6)

    def test_transformations_invert_each_other(self):
        rng = np.random.default_rng(1)
        x = self.P.grid / L_BAR
        for _ in range(3):
            u = np.polynomial.polynomial.polyval(x, rng.normal(size=4))
            back = inverse_transform(self.P, direct_transform(self.Q, u))
            self.assertLess(np.max(np.abs(back - u)) / np.max(np.abs(u)), 1e-6)

    def test_interpolation_matches_series(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            y = rng.uniform(0.0, L_BAR)
            x = rng.uniform(0.0, y)
            direct = self.P.series_value(x, y)
            self.assertLess(abs(float(self.P.value(x, y)) - direct) / abs(direct), 1e-4)

    def test_value_at_nodes(self):
        x = self.P.grid
        self.assertAlmostEqual(float(self.P.value(x[2], x[40])) / self.P.values[2, 40], 1.0, places=12)

    def test_domain_errors(self):
        with self.assertRaises(KernelDomainError):
            self.P.value(0.0, 2 * L_BAR)
        with self.assertRaises(KernelDomainError):
            self.P.value(10e-6, 5e-6)
        with self.assertRaises(KernelDomainError):
            evaluate_p1(self.P, np.zeros(3), 1.5 * L_BAR)

    def test_observer_gain_scales_with_diffusivity(self):
        p1 = evaluate_p1(self.P, np.array([0.0]), 12e-6)
        self.assertAlmostEqual(float(p1[0]) / (self.params.D * float(self.P.value(0.0, 12e-6))), 1.0)


class TestStressKernel(unittest.TestCase):
    def test_second_order_residual(self):
        params = stress_params()
        residuals = [solve_observer_kernel(params, STRESS_GAINS["lambda_"], STRESS_GAINS["gamma1"],
                                           STRESS_GAINS["l_bar"], n).residual_report["pde"]
                     for n in (65, 129, 257)]
        for coarse, fine in zip(residuals, residuals[1:]):
            self.assertGreaterEqual(math.log2(coarse / fine), 1.8)

    def test_depth_cap(self):
        params = stress_params()
        with self.assertRaises(ConvergenceError) as ctx:
            solve_observer_kernel(params, STRESS_GAINS["lambda_"], 1.0, 1.0, grid_n=17, tol=1e-12, max_depth=2)
        self.assertGreater(ctx.exception.last_term_norm, 1e-12)

    def test_tolerance_below_grid_floor_warns(self):
        table = solve_observer_kernel(stress_params(), STRESS_GAINS["lambda_"], 1.0, 1.0, grid_n=17, tol=1e-14)
        self.assertTrue(table.residual_report["warnings"])


class TestKernelCache(unittest.TestCase):
    def test_save_and_reload(self):
        params = stress_params()
        table = solve_observer_kernel(params, 10.0, 1.0, 1.0, grid_n=17)
        with tempfile.TemporaryDirectory() as tmp:
            path = cache_path(os.path.join(tmp, "kernel.npz"), "P")
            self.assertTrue(path.endswith("kernel_P.npz"))
            save_kernel_table(table, path)
            loaded = load_kernel_table(path, "P", params, 10.0, 1.0, 1.0, 17)
            self.assertIsNotNone(loaded)
            np.testing.assert_array_equal(loaded.values, table.values)
            self.assertEqual(loaded.truncation_depth, table.truncation_depth)
            # any change in the request invalidates the cache
            self.assertIsNone(load_kernel_table(path, "P", params, 11.0, 1.0, 1.0, 17))
            self.assertIsNone(load_kernel_table(os.path.join(tmp, "missing.npz"), "P", params, 10.0, 1.0, 1.0, 17))

    def test_observer_kernel_uses_cache(self):
        params = stress_params()
        with tempfile.TemporaryDirectory() as tmp:
            base = os.path.join(tmp, "kernel.npz")
            first = observer_kernel(params, 10.0, 1.0, 1.0, grid_n=17, cache=base)
            self.assertTrue(os.path.exists(cache_path(base, "P")))
            second = observer_kernel(params, 10.0, 1.0, 1.0, grid_n=17, cache=base)
            np.testing.assert_array_equal(first.values, second.values)


class TestPhiGain(unittest.TestCase):
    def setUp(self):
        params = BiophysicalParams.nominal()
        self.model = linearize(params, steady_state_profile(params, 12e-6))
        self.K = (0.0386, 224.3)
        self.phi = build_phi(self.model, self.K, l_bar=L_BAR)

    def test_initial_values(self):
        m = self.model
        D = m.params.D
        np.testing.assert_allclose(self.phi.phi(0.0), m.H)
        expected = np.asarray(self.K) - float(m.H @ m.B) * m.H / D
        np.testing.assert_allclose(self.phi.dphi(0.0), expected, rtol=1e-12)

    def test_spline_matches_exact(self):
        for x in (-L_BAR, -0.37 * L_BAR, -1e-9):
            exact = self.phi.exact(x)
            np.testing.assert_allclose(self.phi.phi(x), exact[:2], rtol=1e-8, atol=1e-12 * np.abs(exact).max())

    def test_slope_matches_central_differences(self):
        x = np.linspace(-20e-6, -1e-6, 7)
        step = 1e-9
        numeric = (self.phi.phi(x + step) - self.phi.phi(x - step)) / (2 * step)
        np.testing.assert_allclose(self.phi.dphi(x), numeric, rtol=1e-6)

    def test_outside_domain(self):
        with self.assertRaises(KernelDomainError):
            self.phi.phi(1e-6)
        with self.assertRaises(KernelDomainError):
            self.phi.phi(-2 * L_BAR)

    def test_gain_config_default_gamma(self):
        gains = GainConfig.nominal()
        self.assertEqual(gains.gamma1, gains.gamma2)


if __name__ == '__main__':
    unittest.main()
