import unittest
from dataclasses import replace

import numpy as np

from kernels import solve_observer_kernel, evaluate_p1
from model import BiophysicalParams, GainConfig, steady_state_profile, linearize
from observer import ObserverState, observer_response, observer_step, observer_error
from simulator import PlantState, Measurements, transport_operator, set_row, sigma_grid, plant_response, measure
from utils import InvalidStateError, right_slope_stencil


def banded_to_dense(ab):
    n1 = ab.shape[1]
    dense = np.zeros((n1, n1))
    for i in range(n1):
        for j in range(max(0, i - 2), min(n1, i + 2)):
            dense[i, j] = ab[1 + i - j, j]
    return dense


class TestObserver(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.params = BiophysicalParams.nominal()
        cls.eq = steady_state_profile(cls.params, 12e-6)
        cls.model = linearize(cls.params, cls.eq)
        cls.gains = GainConfig.nominal()
        cls.kernel = solve_observer_kernel(cls.params, 0.05, 1e4, 24e-6, grid_n=33)

    def sample_state(self, n=32, l=10e-6):
        x = sigma_grid(n)
        X_hat = np.array([2e-3, -1e-6])
        u_hat = 1e-3 * np.cos(3.0 * x)
        u_hat[-1] = self.model.H @ X_hat
        return ObserverState(u_hat=u_hat, X_hat=X_hat), l

    def test_rest_stays_at_rest(self):
        obs = ObserverState(u_hat=np.zeros(33), X_hat=np.zeros(2))
        new = observer_step(obs, Measurements(0.0, 0.0), 0.0, 12e-6, 0.0, self.kernel, self.model, self.gains, 1e-2)
        np.testing.assert_array_equal(new.u_hat, 0.0)
        np.testing.assert_array_equal(new.X_hat, 0.0)
        self.assertAlmostEqual(new.t, 1e-2)

    def test_tip_condition_holds_after_step(self):
        obs, l = self.sample_state()
        new = observer_step(obs, Measurements(1e-3, -2e-6), 0.4, l, 0.0, self.kernel, self.model, self.gains, 1e-3)
        self.assertAlmostEqual(new.boundary_defect(self.model), 0.0, delta=1e-15)

    def test_implicit_injection_matches_dense_solve(self):
        obs, l = self.sample_state()
        dt, y1, y2, U = 1e-3, 1e-3, -2e-6, 0.4
        n = len(obs.u_hat) - 1
        new = observer_step(obs, Measurements(y1, y2), U, l, 0.0, self.kernel, self.model, self.gains, dt)

        ab, inflow = transport_operator(n, l, 0.0, self.params, dt)
        set_row(ab, n, {n: 1.0})
        p1 = np.asarray(evaluate_p1(self.kernel, sigma_grid(n) * l, l), dtype=float)
        p1[n] = 0.0
        stencil = right_slope_stencil(n + 1, l / n)
        A = banded_to_dense(ab) + dt * np.outer(p1, stencil)
        rhs = obs.u_hat + dt * p1 * y1
        rhs[0] += inflow * U
        rhs[n] = self.model.H @ new.X_hat
        expected = np.linalg.solve(A, rhs)
        np.testing.assert_allclose(new.u_hat, expected, rtol=1e-9, atol=1e-12 * np.max(np.abs(expected)))

    def test_response_is_affine_in_command(self):
        obs, l = self.sample_state()
        d = 0.25
        coupled = observer_response(obs, 1e-3, -2e-6, l, 0.0, self.kernel, self.model, self.gains, 1e-3, dy1_dU=d)
        for U in (0.0, 0.3, -1.0):
            direct = observer_step(obs, Measurements(1e-3 + d * U, -2e-6), U, l, 0.0, self.kernel, self.model,
                                   self.gains, 1e-3)
            np.testing.assert_allclose(coupled.at(U).u_hat, direct.u_hat, rtol=1e-10, atol=1e-14)
            np.testing.assert_allclose(coupled.at(U).X_hat, direct.X_hat, rtol=1e-12, atol=1e-18)

    def test_kernel_injects_tip_flux_error(self):
        obs, l = self.sample_state()
        steps = {}
        for kernel in (None, self.kernel):
            a = observer_step(obs, Measurements(1e-3, 0.0), 0.0, l, 0.0, kernel, self.model, self.gains, 1e-3)
            b = observer_step(obs, Measurements(5e-3, 0.0), 0.0, l, 0.0, kernel, self.model, self.gains, 1e-3)
            steps[kernel is None] = b.u_hat - a.u_hat
        # without the kernel y1 only reaches u_hat through the tip value H^T X_hat
        self.assertFalse(np.allclose(steps[True], steps[False], rtol=1e-6, atol=0.0))

    def run_beside_linearized_plant(self, kernel, gains, steps=50, dt=1e-3):
        c0 = 1.5 * self.params.c_inf
        plant = PlantState.uniform(32, c0, c0, 11e-6)
        obs = ObserverState.from_estimate(plant.c, plant.c_c, plant.l, self.eq)
        q_s = self.eq.q_s_star
        for _ in range(steps):
            response = plant_response(plant, self.params, dt, self.eq, plant_model="linearized")
            plant = response.at(q_s)
            obs = observer_step(obs, measure(plant, self.eq), self.eq.q_s_star - q_s, plant.l, response.l_dot,
                                kernel, self.model, gains, dt)
        return observer_error(plant, obs, self.eq)

    def test_without_injection_reproduces_linearized_plant(self):
        gains = replace(self.gains, L=(0.0, 0.0))
        u_tilde, X_tilde = self.run_beside_linearized_plant(None, gains)
        self.assertLess(np.max(np.abs(u_tilde)), 1e-8 * self.params.c_inf)
        self.assertLess(abs(X_tilde[0]), 1e-8 * self.params.c_inf)
        self.assertLess(abs(X_tilde[1]), 1e-18)

    def test_exact_start_keeps_tracking(self):
        u_tilde, X_tilde = self.run_beside_linearized_plant(self.kernel, self.gains, steps=200)
        self.assertLess(np.max(np.abs(u_tilde)), 1e-8 * self.params.c_inf)
        self.assertLess(abs(X_tilde[0]), 1e-8 * self.params.c_inf)
        self.assertLess(abs(X_tilde[1]), 1e-15)

    def test_error_against_plant(self):
        plant = PlantState.at_equilibrium(32, self.eq)
        obs = ObserverState.zero_estimate(32, plant.l, self.eq)
        u_tilde, X_tilde = observer_error(plant, obs, self.eq)
        np.testing.assert_allclose(u_tilde, self.eq.value(plant.x))
        self.assertAlmostEqual(X_tilde[0], float(self.eq.value(12e-6)))

    def test_error_needs_shared_grid(self):
        plant = PlantState.at_equilibrium(32, self.eq)
        obs = ObserverState.zero_estimate(16, plant.l, self.eq)
        with self.assertRaises(InvalidStateError):
            observer_error(plant, obs, self.eq)


if __name__ == '__main__':
    unittest.main()
