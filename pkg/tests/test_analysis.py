import math
import unittest

import numpy as np

from analysis import h1_norm, phi_norms, fit_decay, speed_bound, SpeedMonitor, target_state_check
from controller import law_weights
from kernels import build_phi, solve_direct_kernel
from model import (BiophysicalParams, GainConfig, steady_state_profile, linearize, to_error_coords,
                   nearest_admissible_gains)
from observer import ObserverState
from simulator import PlantState
from utils import InvalidStateError


class TestNorms(unittest.TestCase):
    def test_h1_norm_of_sine(self):
        x = np.linspace(0.0, 1.0, 401)
        expected = math.sqrt(0.5 + 0.5 * math.pi ** 2)
        self.assertAlmostEqual(h1_norm(np.sin(math.pi * x), 1.0), expected, places=4)

    def test_h1_norm_needs_samples(self):
        with self.assertRaises(InvalidStateError):
            h1_norm([1.0, 2.0], 1.0)

    def test_exact_observer_has_no_error(self):
        params = BiophysicalParams.nominal()
        eq = steady_state_profile(params, 12e-6)
        plant = PlantState.uniform(32, 2 * params.c_inf, 2 * params.c_inf, 5e-6)
        u, X = to_error_coords(plant.c, plant.c_c, plant.l, eq)
        phi_tilde, phi = phi_norms(plant, ObserverState(u_hat=u, X_hat=X), eq)
        self.assertEqual(phi_tilde, 0.0)
        self.assertGreater(phi, 0.0)

    def test_plant_only_norms(self):
        params = BiophysicalParams.nominal()
        eq = steady_state_profile(params, 12e-6)
        plant = PlantState.uniform(32, 2 * params.c_inf, 2 * params.c_inf, 5e-6)
        u, X = to_error_coords(plant.c, plant.c_c, plant.l, eq)
        phi_tilde, phi = phi_norms(plant, None, eq)
        self.assertTrue(math.isnan(phi_tilde))
        self.assertAlmostEqual(phi / (h1_norm(u, plant.l) ** 2 + X @ X), 1.0, places=12)


class TestFitDecay(unittest.TestCase):
    def test_recovers_exponential(self):
        t = np.linspace(0.0, 10.0, 50)
        fit = fit_decay(t, 3.0 * np.exp(-0.2 * t))
        self.assertAlmostEqual(fit.rate, 0.2, places=10)
        self.assertAlmostEqual(fit.prefactor, 3.0, places=8)
        self.assertAlmostEqual(fit.r_squared, 1.0, places=10)
        self.assertTrue(fit.decaying)

    def test_window_starts_at_the_peak(self):
        t = np.linspace(0.0, 10.0, 101)
        values = np.where(t < 2.0, t, 2.0 * np.exp(-(t - 2.0)))
        fit = fit_decay(t, values)
        self.assertAlmostEqual(fit.window[0], 2.0)
        self.assertAlmostEqual(fit.rate, 1.0, places=8)

    def test_growth_is_not_decay(self):
        t = np.linspace(0.0, 5.0, 30)
        with self.assertLogs(level="WARNING"):
            fit = fit_decay(t, np.exp(0.5 * t), t_transient=0.0)
        self.assertFalse(fit.decaying)

    def test_non_positive_values_shrink_window(self):
        t = np.linspace(0.0, 10.0, 40)
        values = np.exp(-t)
        values[30:] = 0.0
        with self.assertLogs(level="WARNING"):
            fit = fit_decay(t, values)
        self.assertEqual(fit.samples, 30)
        values[5:] = 0.0
        with self.assertRaises(InvalidStateError):
            fit_decay(t, values)


class TestSpeedBound(unittest.TestCase):
    def test_nominal_bound(self):
        bound = speed_bound(BiophysicalParams.nominal(), GainConfig.nominal(), 24e-6)
        self.assertAlmostEqual(bound / (5e-7 / 3e4), 1.0)

    def test_monitor_records_first_violation(self):
        monitor = SpeedMonitor(1.0)
        self.assertTrue(monitor.check(0.1, 0.5))
        with self.assertLogs(level="WARNING"):
            self.assertFalse(monitor.check(0.2, -2.0))
        monitor.check(0.3, 3.0)
        self.assertEqual(monitor.violations, 2)
        self.assertEqual(monitor.first, 0.2)


class TestTargetState(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.params = BiophysicalParams.nominal()
        cls.eq = steady_state_profile(cls.params, 12e-6)
        cls.model = linearize(cls.params, cls.eq)
        cls.gains, _ = nearest_admissible_gains(cls.model, GainConfig.nominal(), dt=1e-3)
        cls.phi = build_phi(cls.model, cls.gains.K, l_bar=24e-6)

    def test_tip_value_vanishes_when_observer_tip_matches(self):
        X_hat = np.array([1e-3, 2e-6])
        u_hat = np.linspace(1e-3, 0.0, 33)
        u_hat[-1] = self.model.H @ X_hat
        report = target_state_check(ObserverState(u_hat=u_hat, X_hat=X_hat), 12e-6, self.phi, self.model,
                                    self.gains)
        self.assertAlmostEqual(report["w_hat_tip"], 0.0, delta=1e-15)
        self.assertIn("w_hat_soma", report)
        self.assertNotIn("w_tilde_tip", report)

    def soma_residual(self, n, commanded=True):
        """|w_hat_x(0) - gamma2 w_hat(0)| for a smooth u_hat whose soma slope is, or is not, the law's command."""
        l = 12e-6
        x = np.linspace(0.0, l, n + 1)
        X_hat = np.array([2e-3, -1e-6])
        base = self.model.H @ X_hat + 1e-3 * (1 - x / l) ** 2
        bump = x * (1 - x / l) ** 2
        c = 0.0
        if commanded:
            law = law_weights(l, n, self.phi, self.model, self.gains)
            # base'(0) + c = law(base + c bump)
            c = (law(base, X_hat) + 2e-3 / l) / (1 - law(bump, np.zeros(2)))
        obs = ObserverState(u_hat=base + c * bump, X_hat=X_hat)
        return abs(target_state_check(obs, l, self.phi, self.model, self.gains)["w_hat_soma"])

    def test_law_enforces_the_soma_condition_under_refinement(self):
        coarse, fine = self.soma_residual(32), self.soma_residual(128)
        self.assertLess(fine, coarse / 10)
        self.assertLess(fine, 0.05 * self.soma_residual(128, commanded=False))

    def test_observer_error_branch(self):
        kernel_Q = solve_direct_kernel(self.params, 0.05, 1e4, 24e-6, grid_n=33)
        plant = PlantState.uniform(32, 2 * self.params.c_inf, 2 * self.params.c_inf, 10e-6)
        obs = ObserverState.zero_estimate(32, plant.l, self.eq)
        report = target_state_check(obs, plant.l, self.phi, self.model, self.gains, plant=plant, eq=self.eq,
                                    kernel_Q=kernel_Q)
        self.assertLess(abs(report["w_tilde_tip"]), 1e-12)
        self.assertGreater(report["w_tilde_h1"], 0.0)
        self.assertTrue(math.isfinite(report["w_tilde_soma"]))

        u, X = to_error_coords(plant.c, plant.c_c, plant.l, self.eq)
        exact = target_state_check(ObserverState(u_hat=u, X_hat=X), plant.l, self.phi, self.model, self.gains,
                                   plant=plant, eq=self.eq, kernel_Q=kernel_Q)
        self.assertEqual((exact["w_tilde_tip"], exact["w_tilde_soma"], exact["w_tilde_h1"]), (0.0, 0.0, 0.0))


if __name__ == '__main__':
    unittest.main()
