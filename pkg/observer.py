"""
Luenberger-backstepping observer of the linearized error system.

The estimate u_hat lives on the same sigma grid as the plant and follows

    u_hat_t = D u_hat_xx - a u_hat_x - g u_hat + p1(x, l) (y1 - u_hat_x(l)),
    u_hat_x(0) = U,   u_hat(l) = H^T X_hat,
    X_hat' = A X_hat + B y1 + L (y2 - C X_hat),

with p1 = D P(x, l). The injection term is implicit: the banded transport
operator plus the rank-one term dt p1 s^T (s the tip-slope stencil) is solved
by the Sherman-Morrison formula.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from kernels import evaluate_p1
from model import to_error_coords
from simulator import sigma_grid, transport_operator, set_row
from utils import InvalidStateError, dump_diagnostics, require_finite, right_slope_stencil


@dataclass(frozen=True)
class ObserverState:
    u_hat: np.ndarray
    X_hat: np.ndarray
    t: float = 0.0

    @classmethod
    def from_estimate(cls, c_hat, c_c_hat, l, eq, t=0.0):
        """Observer state for a physical estimate (c_hat on a uniform grid over [0, l], c_c_hat)."""
        u_hat, X_hat = to_error_coords(c_hat, c_c_hat, l, eq)
        return cls(u_hat=u_hat, X_hat=X_hat, t=t)

    @classmethod
    def zero_estimate(cls, n, l, eq, t=0.0):
        """Estimated concentration zero everywhere; the length is taken from the measurement."""
        return cls.from_estimate(np.zeros(n + 1), 0.0, l, eq, t)

    def boundary_defect(self, model):
        """u_hat(l) - H^T X_hat."""
        return float(self.u_hat[-1] - model.H @ self.X_hat)


@dataclass
class ObserverResponse:
    """One observer step as an affine function of the soma command U."""
    base_u: np.ndarray
    gain_u: np.ndarray
    base_X: np.ndarray
    gain_X: np.ndarray
    t: float

    def at(self, U):
        u_hat = self.base_u + U * self.gain_u
        X_hat = self.base_X + U * self.gain_X
        require_finite("observer step produced non-finite values", u_hat=u_hat, X_hat=X_hat)
        return ObserverState(u_hat=u_hat, X_hat=X_hat, t=self.t)


def observer_response(obs, y1, y2, l, l_dot, kernel, model, gains, dt, dy1_dU=0.0):
    """
    Step the observer with measurements y1 + U * dy1_dU and y2 on the measured
    domain [0, l]. kernel=None switches the PDE injection off.
    """
    n = len(obs.u_hat) - 1
    ab, inflow = transport_operator(n, l, l_dot, model.params, dt)
    set_row(ab, n, {n: 1.0})

    if kernel is not None:
        p1 = np.asarray(evaluate_p1(kernel, sigma_grid(n) * l, l), dtype=float)
        p1[n] = 0.0
    else:
        p1 = np.zeros(n + 1)

    L = np.asarray(gains.L)
    X = obs.X_hat
    # diagonal of A and the innovation implicit, the coupling r_g explicit, as in
    # the linearized plant's cone row and length update
    diagonal = np.diag(np.diag(model.A))
    implicit = np.identity(2) - dt * diagonal + dt * np.outer(L, model.C)
    explicit = X + dt * ((model.A - diagonal) @ X + L * y2 + model.B * y1)
    base_X = np.linalg.solve(implicit, explicit)
    gain_X = np.linalg.solve(implicit, dt * model.B * dy1_dU)

    rhs = np.zeros((n + 1, 3))
    rhs[:, 0] = obs.u_hat + dt * p1 * y1
    rhs[n, 0] = model.H @ base_X
    rhs[:, 1] = dt * p1 * dy1_dU
    rhs[0, 1] += inflow
    rhs[n, 1] = model.H @ gain_X
    rhs[:, 2] = dt * p1

    Z = solve_banded((2, 1), ab, rhs)
    stencil = right_slope_stencil(n + 1, l / n)
    denominator = 1.0 + stencil @ Z[:, 2]
    if not np.isfinite(denominator) or abs(denominator) < 1e-14:
        raise dump_diagnostics("observer injection update is singular", p1=p1, Z=Z)
    solution = Z[:, :2] - np.outer(Z[:, 2], stencil @ Z[:, :2]) / denominator
    return ObserverResponse(base_u=solution[:, 0], gain_u=solution[:, 1],
                            base_X=base_X, gain_X=gain_X, t=obs.t + dt)


def observer_step(obs, meas, U, l, l_dot, kernels, model, gains, dt):
    """Advance the observer by dt with measurements meas and soma command U."""
    return observer_response(obs, meas.y1, meas.y2, l, l_dot, kernels, model, gains, dt).at(U)


def observer_error(plant, obs, eq):
    """(u - u_hat, X - X_hat) on the shared grid."""
    if len(plant.c) != len(obs.u_hat):
        logging.error("Plant and observer grids differ: %d vs %d nodes", len(plant.c), len(obs.u_hat))
        raise InvalidStateError("plant and observer must share the sigma grid")
    u, X = to_error_coords(plant.c, plant.c_c, plant.l, eq)
    return u - obs.u_hat, X - obs.X_hat
