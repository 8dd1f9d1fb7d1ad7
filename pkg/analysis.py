"""
Norms, decay fits and transformed-state checks measured on simulation states.
"""
import math
import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import linregress

from model import to_error_coords
from observer import observer_error
from utils import InvalidStateError, hat_volterra


def h1_norm(f, l):
    """sqrt(int_0^l f^2 + f_x^2 dx) for samples on a uniform grid over [0, l]."""
    f = np.asarray(f, dtype=float)
    if not l > 0:
        raise InvalidStateError(f"domain length must be positive, got {l}")
    if len(f) < 3:
        raise InvalidStateError("H1 norm needs at least 3 samples")
    h = l / (len(f) - 1)
    f_x = np.gradient(f, h, edge_order=2)
    return math.sqrt(trapezoid(f ** 2 + f_x ** 2, dx=h))


def phi_norms(plant, obs, eq):
    """
    (Phi_tilde, Phi) with
    Phi_tilde = ||u - u_hat||_H1 + |X - X_hat|,
    Phi = ||u||_H1^2 + |X|^2 + ||u_hat||_H1^2 + |X_hat|^2.
    Without an observer Phi_tilde is nan and Phi keeps the plant terms.
    """
    u, X = to_error_coords(plant.c, plant.c_c, plant.l, eq)
    if obs is None:
        return math.nan, h1_norm(u, plant.l) ** 2 + float(X @ X)
    u_tilde, X_tilde = observer_error(plant, obs, eq)
    l = plant.l
    phi_tilde = h1_norm(u_tilde, l) + float(np.linalg.norm(X_tilde))
    phi = (h1_norm(u, l) ** 2 + float(X @ X)
           + h1_norm(obs.u_hat, l) ** 2 + float(obs.X_hat @ obs.X_hat))
    return phi_tilde, phi


@dataclass(frozen=True)
class DecayReport:
    rate: float
    prefactor: float
    r_squared: float
    window: tuple
    samples: int

    @property
    def decaying(self):
        return self.rate > 0

    def __str__(self):
        return (f"kappa={self.rate:.6g} 1/s, prefactor={self.prefactor:.6g}, R^2={self.r_squared:.6f}, "
                f"window=[{self.window[0]:.6g}, {self.window[1]:.6g}] s, n={self.samples}")


def fit_decay(t, values, t_transient=None, min_samples=10):
    """
    Least-squares line through (t, ln value) from t_transient (default: time
    of the maximum) to the end. Non-positive values cut the window short.
    """
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    if t.shape != values.shape or t.ndim != 1:
        raise InvalidStateError("fit_decay needs matching 1-D time and value series")
    start = int(np.argmax(values)) if t_transient is None else int(np.searchsorted(t, t_transient))
    window_t, window_v = t[start:], values[start:]

    bad = np.flatnonzero(~(window_v > 0))
    if bad.size:
        logging.warning("Decay fit window shrunk at t=%.6g: non-positive value %.3g",
                        window_t[bad[0]], window_v[bad[0]])
        window_t, window_v = window_t[:bad[0]], window_v[:bad[0]]
    if len(window_v) < min_samples:
        raise InvalidStateError(f"decay fit needs {min_samples} positive samples, got {len(window_v)}")

    fit = linregress(window_t, np.log(window_v))
    report = DecayReport(rate=float(-fit.slope), prefactor=float(math.exp(fit.intercept)),
                         r_squared=float(fit.rvalue ** 2), window=(float(window_t[0]), float(window_t[-1])),
                         samples=len(window_v))
    if not report.decaying:
        logging.warning("Series is not decaying: %s", report)
    return report


def speed_bound(params, gains, l_bar):
    """Admissible growth speed min{g/(3 gamma2), D/(8 l_bar), (g + lambda)/(2 gamma1)}."""
    return min(params.g / (3.0 * gains.gamma2), params.D / (8.0 * l_bar),
               (params.g + gains.lambda_) / (2.0 * gains.gamma1))


class SpeedMonitor:
    """Counts steps with |l'| above the admissible speed; the first one is a warning."""

    def __init__(self, bound):
        self.bound = bound
        self.violations = 0
        self.first = None

    def check(self, t, l_dot):
        if abs(l_dot) <= self.bound:
            return True
        self.violations += 1
        if self.first is None:
            self.first = t
            logging.warning("Growth speed %.3g m/s exceeds the admissible bound %.3g m/s at t=%.6g s",
                            abs(l_dot), self.bound, t)
        logging.debug("speed bound violated at t=%.6g: |l'|=%.3g", t, abs(l_dot))
        return False


def _left_slope(f, h):
    return (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)


def target_state_check(obs, l, phi, model, gains, plant=None, eq=None, kernel_Q=None):
    """
    Reconstruct the transformed states and report their boundary residuals.

    w_hat = u_hat + (1/D) int_x^l phi(x - y)^T B u_hat(y) dy - phi(x - l)^T X_hat
    (target: w_hat_x(0) = gamma2 w_hat(0), w_hat(l) = 0), and when plant, eq
    and the direct kernel are given,
    w_tilde = u_tilde - int_x^l Q(x, y) u_tilde(y) dy
    (target: w_tilde_x(0) = gamma1 w_tilde(0), w_tilde(l) = H^T X_tilde).
    """
    D = model.params.D
    n1 = len(obs.u_hat)
    h = l / (n1 - 1)
    x = np.linspace(0.0, l, n1)
    M_phi = hat_volterra(lambda s, y: phi.phi(np.minimum(s - y, 0.0)) @ model.B, l, n1 - 1)
    w_hat = obs.u_hat + M_phi @ obs.u_hat / D - phi.phi(x - l) @ obs.X_hat
    report = {
        "w_hat_tip": float(w_hat[-1]),
        "w_hat_soma": float(_left_slope(w_hat, h) - gains.gamma2 * w_hat[0]),
        "w_hat_h1": h1_norm(w_hat, l),
    }

    if plant is not None and eq is not None and kernel_Q is not None:
        u_tilde, X_tilde = observer_error(plant, obs, eq)
        M_Q = hat_volterra(lambda s, y: kernel_Q.value(np.minimum(s, y), y), l, n1 - 1)
        w_tilde = u_tilde - M_Q @ u_tilde
        report.update({
            "w_tilde_tip": float(w_tilde[-1] - model.H @ X_tilde),
            "w_tilde_soma": float(_left_slope(w_tilde, h) - kernel_Q.gamma1 * w_tilde[0]),
            "w_tilde_h1": h1_norm(w_tilde, l),
        })
    return report
