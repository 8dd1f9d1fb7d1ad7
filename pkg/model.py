"""
Plant parameters, the setpoint equilibrium and the linearized error model.

All quantities are SI: lengths in m, times in s, concentrations in mol/m^3.
"""
import math
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from config import NOMINAL_PARAMS, DEFAULT_GAINS, SETTLE_RATE
from utils import InvalidStateError


@dataclass(frozen=True)
class BiophysicalParams:
    D: float
    a: float
    g: float
    r_g: float
    r_g_tilde: float
    l_c: float
    c_inf: float

    def __post_init__(self):
        for name in ("D", "a", "g", "r_g", "r_g_tilde", "l_c", "c_inf"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidStateError(f"parameter {name} must be finite, got {value}")
        for name in ("D", "l_c", "c_inf"):
            if getattr(self, name) <= 0:
                raise InvalidStateError(f"parameter {name} must be positive, got {getattr(self, name)}")
        # a, g and the growth rates may vanish for the reduced test problems
        for name in ("a", "g", "r_g", "r_g_tilde"):
            if getattr(self, name) < 0:
                raise InvalidStateError(f"parameter {name} must be non-negative, got {getattr(self, name)}")

    @classmethod
    def nominal(cls):
        return cls(**NOMINAL_PARAMS)

    @property
    def cone_slope(self):
        """Steady boundary slope (a - g l_c) c_inf / D demanded at the cone."""
        return (self.a - self.g * self.l_c) * self.c_inf / self.D


def cone_rate(params, c_c, c_x_at_tip):
    """Right side of the growth-cone balance, d c_c / dt."""
    p = params
    return ((p.a - p.g * p.l_c) * c_c - p.D * c_x_at_tip
            - (p.r_g * c_c + p.r_g_tilde * p.l_c) * (c_c - p.c_inf)) / p.l_c


def growth_rate(params, c_c):
    """Axon elongation speed dl/dt."""
    return params.r_g * (c_c - params.c_inf)


@dataclass(frozen=True)
class EquilibriumProfile:
    """
    Steady concentration along an axon held at length l_s.

    The profile is stored around the setpoint,
        c_eq(x) = coeff_plus * exp(root_plus (x - l_s)) + coeff_minus * exp(root_minus (x - l_s)),
    and in the repeated-root case as (coeff_plus + coeff_minus (x - l_s)) exp(root_plus (x - l_s)).
    The closed form is valid for every x >= 0, including x > l_s.
    """
    l_s: float
    coeff_plus: float
    coeff_minus: float
    root_plus: float
    root_minus: float
    q_s_star: float
    repeated: bool = False

    def value(self, x):
        s = np.asarray(x, dtype=float) - self.l_s
        if self.repeated:
            return (self.coeff_plus + self.coeff_minus * s) * np.exp(self.root_plus * s)
        return self.coeff_plus * np.exp(self.root_plus * s) + self.coeff_minus * np.exp(self.root_minus * s)

    def slope(self, x):
        s = np.asarray(x, dtype=float) - self.l_s
        if self.repeated:
            r = self.root_plus
            return (self.coeff_minus + r * (self.coeff_plus + self.coeff_minus * s)) * np.exp(r * s)
        return (self.coeff_plus * self.root_plus * np.exp(self.root_plus * s)
                + self.coeff_minus * self.root_minus * np.exp(self.root_minus * s))

    def curvature(self, x):
        s = np.asarray(x, dtype=float) - self.l_s
        if self.repeated:
            r = self.root_plus
            return (2.0 * r * self.coeff_minus + r * r * (self.coeff_plus + self.coeff_minus * s)) * np.exp(r * s)
        return (self.coeff_plus * self.root_plus ** 2 * np.exp(self.root_plus * s)
                + self.coeff_minus * self.root_minus ** 2 * np.exp(self.root_minus * s))


def steady_state_profile(params, l_s):
    """
    Solve D c'' - a c' - g c = 0 on [0, l_s] with c(l_s) = c_inf and
    D c'(l_s) = (a - g l_c) c_inf, the cone balance with every rate at rest.
    """
    if not (l_s > 0 and math.isfinite(l_s)):
        raise InvalidStateError(f"setpoint length must be positive, got {l_s}")
    D, a, g = params.D, params.a, params.g
    c_inf = params.c_inf
    slope = params.cone_slope
    root_gap = math.sqrt(a * a + 4.0 * D * g)
    scale = abs(a) + 2.0 * math.sqrt(D * g)

    if root_gap <= 1e-12 * scale or root_gap == 0.0:
        # double root r = a / 2D
        r = a / (2.0 * D)
        profile = EquilibriumProfile(l_s=l_s, coeff_plus=c_inf, coeff_minus=slope - r * c_inf,
                                     root_plus=r, root_minus=r, q_s_star=0.0, repeated=True)
    else:
        r_plus = (a + root_gap) / (2.0 * D)
        r_minus = (a - root_gap) / (2.0 * D)
        c_plus = (slope - r_minus * c_inf) / (r_plus - r_minus)
        profile = EquilibriumProfile(l_s=l_s, coeff_plus=c_plus, coeff_minus=c_inf - c_plus,
                                     root_plus=r_plus, root_minus=r_minus, q_s_star=0.0)

    profile = replace(profile, q_s_star=float(-profile.slope(0.0)))
    logging.info("Equilibrium at l_s=%.6g m: roots (%.6g, %.6g) 1/m, q_s*=%.6g mol/m^4",
                 l_s, profile.root_plus, profile.root_minus, profile.q_s_star)
    return profile


@dataclass(frozen=True)
class LinearModel:
    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    C: np.ndarray
    a_tilde: float
    beta: float
    params: BiophysicalParams = field(repr=False)


def linearize(params, eq):
    """
    Linearize the cone balance about (z1, z2) = 0.

    z1' = a_tilde z1 - beta u_x(l) - (r_g / l_c) z1^2, z2' = r_g z1.
    The cross term -D c_eq''(l_s) z2 / l_c is dropped from A and only logged.
    """
    p = params
    a_tilde = (p.a - p.g * p.l_c - p.r_g * p.c_inf - p.r_g_tilde * p.l_c) / p.l_c
    beta = p.D / p.l_c
    A = np.array([[a_tilde, 0.0], [p.r_g, 0.0]])
    B = np.array([-beta, 0.0])
    H = np.array([1.0, -p.cone_slope])
    C = np.array([0.0, 1.0])
    cross = p.D * abs(float(eq.curvature(eq.l_s))) / p.l_c
    logging.info("Linear model: a_tilde=%.6g 1/s, beta=%.6g m/s, dropped z2 cross term coefficient %.3g",
                 a_tilde, beta, cross)
    return LinearModel(A=A, B=B, H=H, C=C, a_tilde=a_tilde, beta=beta, params=p)


def _sample_points(n_samples, l):
    if l <= 0 or not math.isfinite(l):
        raise InvalidStateError(f"axon length must be positive, got {l}")
    return np.linspace(0.0, 1.0, n_samples) * l


def to_error_coords(c_samples, c_c, l, eq):
    """Map samples on a uniform grid over [0, l] to (u, X)."""
    c_samples = np.asarray(c_samples, dtype=float)
    x = _sample_points(len(c_samples), l)
    u = c_samples - eq.value(x)
    X = np.array([c_c - eq.value(eq.l_s), l - eq.l_s])
    return u, X


def from_error_coords(u_samples, X, eq):
    u_samples = np.asarray(u_samples, dtype=float)
    l = eq.l_s + X[1]
    x = _sample_points(len(u_samples), l)
    c_c = float(eq.value(eq.l_s)) + X[0]
    return u_samples + eq.value(x), c_c, l


# ============================
#  Gains
# ============================

@dataclass(frozen=True)
class GainConfig:
    lambda_: float
    gamma1: float
    gamma2: float
    K: tuple
    L: tuple

    def __post_init__(self):
        if not self.lambda_ > 0:
            raise InvalidStateError(f"lambda must be positive, got {self.lambda_}")
        if len(self.K) != 2 or len(self.L) != 2:
            raise InvalidStateError("K and L must each have two entries")
        object.__setattr__(self, "K", tuple(float(k) for k in self.K))
        object.__setattr__(self, "L", tuple(float(v) for v in self.L))

    @classmethod
    def nominal(cls):
        return cls(lambda_=DEFAULT_GAINS["lambda"], gamma1=DEFAULT_GAINS["gamma1"],
                   gamma2=DEFAULT_GAINS["gamma2"], K=DEFAULT_GAINS["K"], L=DEFAULT_GAINS["L"])


def _hurwitz(eigs):
    # an eigenvalue at round-off distance from the axis counts as marginal
    return bool(np.max(eigs.real) < -1e-12 * np.max(np.abs(eigs)))


@dataclass(frozen=True)
class GainReport:
    gamma1_ok: bool
    gamma2_ok: bool
    l2_ok: bool
    l1_ok: bool
    k1_ok: bool
    k2_ok: bool
    observer_eigs: np.ndarray
    controller_eigs: np.ndarray

    @property
    def observer_ok(self):
        return self.l1_ok and self.l2_ok

    @property
    def controller_ok(self):
        return self.k1_ok and self.k2_ok

    @property
    def observer_hurwitz(self):
        return _hurwitz(self.observer_eigs)

    @property
    def controller_hurwitz(self):
        return _hurwitz(self.controller_eigs)

    @property
    def all_ok(self):
        return self.gamma1_ok and self.gamma2_ok and self.observer_ok and self.controller_ok

    def violations(self):
        names = {
            "gamma1_ok": "gamma1 >= D/a",
            "gamma2_ok": "gamma2 >= a/D",
            "l2_ok": "l2 > a_tilde",
            "l1_ok": "l1 > a_tilde*l2/r_g",
            "k1_ok": "k1 > a_tilde/beta",
            "k2_ok": "k2 > 0",
        }
        return [text for key, text in names.items() if not getattr(self, key)]


def observer_matrix(model, gains):
    return model.A - np.outer(gains.L, model.C)


def controller_matrix(model, gains):
    return model.A + np.outer(model.B, gains.K)


def check_gains(model, gains, log=True):
    """
    Evaluate the gain inequalities and the eigenvalues of A - LC and A + BK.
    Violations are reported, never raised.
    """
    p = model.params
    l1, l2 = gains.L
    k1, k2 = gains.K
    report = GainReport(
        gamma1_ok=bool(gains.gamma1 * p.a >= p.D),
        gamma2_ok=bool(gains.gamma2 >= p.a / p.D),
        l2_ok=bool(l2 > model.a_tilde),
        # written without dividing by r_g
        l1_ok=bool(l1 * p.r_g > model.a_tilde * l2),
        k1_ok=bool(k1 * model.beta > model.a_tilde),
        k2_ok=bool(k2 > 0),
        observer_eigs=np.linalg.eigvals(observer_matrix(model, gains)),
        controller_eigs=np.linalg.eigvals(controller_matrix(model, gains)),
    )
    if log and report.all_ok:
        logging.info("Gain check passed: A-LC eigs %s, A+BK eigs %s",
                     report.observer_eigs, report.controller_eigs)
    elif log:
        logging.warning("Gain conditions violated: %s", ", ".join(report.violations()))
    return report


def nearest_admissible_gains(model, gains, dt, settle_rate=SETTLE_RATE):
    """
    Return (gains, substituted). K is replaced by the pole placement of A + BK
    at a double pole -settle_rate when it fails the controller conditions or
    when A + BK is too fast to resolve at step dt.
    """
    report = check_gains(model, gains)
    fastest = float(np.max(np.abs(report.controller_eigs)))
    if report.controller_ok and fastest * dt <= 0.1:
        return gains, False
    if model.params.r_g <= 0:
        raise InvalidStateError("cannot place controller poles with r_g = 0")
    k1 = (2.0 * settle_rate + model.a_tilde) / model.beta
    k2 = settle_rate ** 2 / (model.beta * model.params.r_g)
    logging.warning("Controller gains K=%s replaced by K=(%.6g, %.6g) (conditions ok: %s, |eig|*dt=%.3g)",
                    gains.K, k1, k2, report.controller_ok, fastest * dt)
    return replace(gains, K=(k1, k2)), True
