"""
Front-fixed finite-difference integration of the moving-boundary plant.

With sigma = x / l(t) the concentration obeys

    c_t = (D / l^2) c_ss + ((sigma l' - a) / l) c_s - g c,   0 < sigma < 1,

with c_x(0) = -q_s at the soma and c(1) = c_c at the cone. One step is
backward Euler for the whole linear operator; the cone balance is the last
row of the same banded system, its quadratic term frozen at the old c_c.
The length advances explicitly from the old cone concentration.
"""
import math
import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import solve_banded

from model import cone_rate, growth_rate
from utils import InvalidStateError, dump_diagnostics, require_finite, right_slope, right_slope_stencil

PLANT_MODELS = ("nonlinear", "linearized")


def sigma_grid(n):
    return np.linspace(0.0, 1.0, n + 1)


@dataclass(frozen=True)
class PlantState:
    c: np.ndarray
    c_c: float
    l: float
    t: float = 0.0

    def __post_init__(self):
        if not (self.l > 0 and math.isfinite(self.l)):
            raise InvalidStateError(f"axon length must be positive, got {self.l}")
        if len(self.c) < 3:
            raise InvalidStateError("plant state needs at least 3 grid points")

    @property
    def n(self):
        return len(self.c) - 1

    @property
    def sigma_grid(self):
        return sigma_grid(self.n)

    @property
    def x(self):
        return self.sigma_grid * self.l

    @classmethod
    def uniform(cls, n, value, c_c, l, t=0.0):
        c = np.full(n + 1, float(value))
        c[-1] = c_c
        return cls(c=c, c_c=float(c_c), l=float(l), t=t)

    @classmethod
    def at_equilibrium(cls, n, eq, t=0.0):
        c = np.asarray(eq.value(sigma_grid(n) * eq.l_s), dtype=float)
        return cls(c=c, c_c=float(c[-1]), l=eq.l_s, t=t)


@dataclass(frozen=True)
class Measurements:
    y1: float
    y2: float


# ============================
#  Shared operator
# ============================

def transport_operator(n, l, l_dot, params, dt):
    """
    Banded (2 lower, 1 upper) matrix of I - dt L on rows 0..n-1 and the
    weight of the soma boundary slope s0 = c_x(0) in the row-0 right side.
    Row n is left empty for the caller.
    """
    D, a, g = params.D, params.a, params.g
    ds = 1.0 / n
    sigma = sigma_grid(n)
    diff = D / (l * ds) ** 2
    velocity = (sigma * l_dot - a) / l
    up = np.maximum(velocity, 0.0) / ds
    down = np.minimum(velocity, 0.0) / ds

    ab = np.zeros((4, n + 1))
    k = np.arange(1, n)
    ab[1, k] = 1.0 - dt * (-2.0 * diff - up[k] + down[k] - g)
    ab[0, k + 1] = -dt * (diff + up[k])
    ab[2, k - 1] = -dt * (diff - down[k])
    # soma node with the ghost point c_{-1} = c_1 - 2 ds l s0
    ab[1, 0] = 1.0 - dt * (-2.0 * diff - g)
    ab[0, 1] = -dt * 2.0 * diff
    inflow = dt * (-2.0 * diff * ds * l - a)
    return ab, inflow


def set_row(ab, i, entries):
    """Write {column: value} into row i of a (2, 1) banded matrix."""
    for j, value in entries.items():
        ab[1 + i - j, j] = value


# ============================
#  Plant
# ============================

@dataclass
class PlantResponse:
    """One plant step as an affine function of the soma influx: c_new = base + q_s * gain."""
    base: np.ndarray
    gain: np.ndarray
    l: float
    l_dot: float
    t: float
    frozen_cone: bool = False

    def at(self, q_s):
        c = self.base + q_s * self.gain
        require_finite("plant step produced non-finite concentration", c=c)
        return PlantState(c=c, c_c=float(c[-1]), l=self.l, t=self.t)

    def measurement_slope(self, eq):
        """(y1 at q_s = 0, dy1/dq_s)."""
        h = self.l / (len(self.base) - 1)
        return (right_slope(self.base, h) - float(eq.slope(self.l)), right_slope(self.gain, h))


def plant_response(state, params, dt, eq=None, plant_model="nonlinear", frozen_cone=False):
    if plant_model not in PLANT_MODELS:
        raise InvalidStateError(f"unknown plant model '{plant_model}'")
    if not dt > 0:
        raise InvalidStateError(f"time step must be positive, got {dt}")
    n = state.n
    l_dot = 0.0 if frozen_cone else growth_rate(params, state.c_c)
    l_new = state.l + dt * l_dot
    if not l_new > 0:
        logging.error("Axon length %.6g became non-positive at t=%.6g", l_new, state.t + dt)
        raise InvalidStateError(f"axon length became non-positive ({l_new:.6g})")

    ab, inflow = transport_operator(n, l_new, l_dot, params, dt)
    rhs = np.zeros((n + 1, 2))
    rhs[:, 0] = state.c
    # the soma slope is -q_s
    rhs[0, 1] = -inflow

    if frozen_cone:
        set_row(ab, n, {n: 1.0})
        rhs[n, 0] = state.c_c
    else:
        stencil = right_slope_stencil(n + 1, l_new / n)
        D, l_c = params.D, params.l_c
        if plant_model == "nonlinear":
            reaction = params.r_g * state.c_c + params.r_g_tilde * l_c
            diagonal = l_c / dt - (params.a - params.g * l_c) + reaction
            rhs[n, 0] = l_c * state.c_c / dt + reaction * params.c_inf
        else:
            if eq is None:
                raise InvalidStateError("the linearized plant needs the equilibrium profile")
            a_tilde = (params.a - params.g * l_c - params.r_g * params.c_inf - params.r_g_tilde * l_c) / l_c
            diagonal = l_c / dt - l_c * a_tilde
            rhs[n, 0] = l_c * state.c_c / dt - l_c * a_tilde * params.c_inf + D * float(eq.slope(l_new))
        set_row(ab, n, {n: diagonal + D * stencil[-1], n - 1: D * stencil[-2], n - 2: D * stencil[-3]})

    solution = solve_banded((2, 1), ab, rhs)
    if not np.all(np.isfinite(solution)):
        raise dump_diagnostics("plant step produced non-finite values", c=state.c, solution=solution)
    return PlantResponse(base=solution[:, 0], gain=solution[:, 1], l=l_new, l_dot=l_dot,
                         t=state.t + dt, frozen_cone=frozen_cone)


def plant_step(state, q_s, params, dt, eq=None, plant_model="nonlinear", frozen_cone=False):
    """Advance the plant by dt under soma influx q_s."""
    return plant_response(state, params, dt, eq, plant_model, frozen_cone).at(q_s)


def measure(state, eq):
    """y1 = c_x(l) - c_eq'(l) by the one-sided second-order stencil, y2 = l - l_s."""
    if len(state.c) < 3:
        raise InvalidStateError("at least 3 grid points are needed to measure the tip flux")
    y1 = right_slope(state.c, state.l / state.n) - float(eq.slope(state.l))
    return Measurements(y1=float(y1), y2=float(state.l - eq.l_s))


def cone_balance_residual(params, state_old, state_new, dt):
    """Cone-balance defect of a step, with the quadratic term frozen at the old c_c as in the solve."""
    c_x = right_slope(state_new.c, state_new.l / state_new.n)
    frozen_rate = cone_rate(params, state_new.c_c, c_x) + params.r_g * (state_new.c_c - state_old.c_c) \
        * (state_new.c_c - params.c_inf) / params.l_c
    return (state_new.c_c - state_old.c_c) / dt - frozen_rate


def total_mass(state):
    return float(trapezoid(state.c, state.x))
