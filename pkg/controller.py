"""
Output-feedback boundary control law.

    U = ((D gamma2 - beta) / D) u_hat(0) + (phi'(-l) - gamma2 phi(-l))^T X_hat
        - (1/D) int_0^l (phi'(-y) - gamma2 phi(-y))^T B u_hat(y) dy

and the soma influx q_s = q_s* - U.
"""
import logging
from dataclasses import dataclass

import numpy as np

from utils import hat_weights


@dataclass(frozen=True)
class ControlValue:
    U: float
    q_s: float
    clamped: bool = False


@dataclass(frozen=True)
class LawWeights:
    """The law as a linear functional: U = w . u_hat + v . X_hat."""
    w: np.ndarray
    v: np.ndarray

    def __call__(self, u_hat, X_hat):
        return float(self.w @ u_hat + self.v @ X_hat)


def law_weights(l, n, phi, model, gains, D=None):
    """
    The law on an n-cell grid of [0, l]. The integral runs over the linear
    interpolant of u_hat; phi varies on the scale D/beta, far below the grid
    spacing, so it is integrated per cell rather than sampled at the nodes.
    """
    D = model.params.D if D is None else D
    gamma2 = gains.gamma2

    def integrand(y):
        return -((phi.dphi(-y) - gamma2 * phi.phi(-y)) @ model.B) / D

    w = hat_weights(integrand, l, n)
    w[0] += (D * gamma2 - model.beta) / D
    v = phi.dphi(-l) - gamma2 * phi.phi(-l)
    return LawWeights(w=w, v=np.asarray(v, dtype=float))


def control_law(obs, l, phi, model, gains, D=None, q_s_star=0.0, clamp=False):
    weights = law_weights(l, len(obs.u_hat) - 1, phi, model, gains, D)
    return to_control(weights(obs.u_hat, obs.X_hat), q_s_star, clamp, obs.t)


def to_control(U, q_s_star, clamp=False, t=None):
    q_s = q_s_star - U
    if clamp and q_s < 0:
        logging.warning("Soma influx %.6g clamped to 0 at t=%s", q_s, t)
        return ControlValue(U=q_s_star, q_s=0.0, clamped=True)
    return ControlValue(U=U, q_s=q_s)
