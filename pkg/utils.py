import math
import logging
import re

import numpy as np

from config import LOG_FILE, LOG_LEVEL


def setup_logging(log_file=None, level=None):
    """Send log records to the run log file."""
    logging.basicConfig(
        filename=log_file or LOG_FILE,
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s'
    )


# ============================
#  Errors
# ============================

class AxonGrowthError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(AxonGrowthError, ValueError):
    def __init__(self, message, field=None, line=None):
        self.message = message
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class InvalidStateError(AxonGrowthError, ValueError):
    pass


class NumericalError(AxonGrowthError, ArithmeticError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class KernelDomainError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, last_term_norm, diagnostics=None):
        self.last_term_norm = last_term_norm
        super().__init__(message, diagnostics)


class VerificationError(AxonGrowthError):
    """One or more verification suites failed; failed holds their names."""

    def __init__(self, message, failed=()):
        super().__init__(message)
        self.failed = list(failed)


def dump_diagnostics(message, **arrays):
    """Log a fatal numerical state and return it as a NumericalError."""
    diagnostics = {}
    for name, value in arrays.items():
        value = np.asarray(value, dtype=float)
        diagnostics[name] = value
        finite = np.isfinite(value)
        logging.error("%s: %s shape=%s non-finite=%d min=%s max=%s", message, name, value.shape,
                      int(value.size - finite.sum()),
                      np.min(value[finite]) if finite.any() else "n/a",
                      np.max(value[finite]) if finite.any() else "n/a")
    return NumericalError(message, diagnostics)


def require_finite(message, **arrays):
    for value in arrays.values():
        if not np.all(np.isfinite(value)):
            raise dump_diagnostics(message, **arrays)


# ============================
#  Units
# ============================

# Factors to SI. Compound units are written without spaces: m2/s, um/min, m4/(mol*s).
UNIT_FACTORS = {
    "": 1.0,
    "m": 1.0, "mm": 1e-3, "um": 1e-6, "nm": 1e-9,
    "s": 1.0, "ms": 1e-3, "min": 60.0, "h": 3600.0,
    "1/s": 1.0, "1/min": 1.0 / 60.0,
    "m/s": 1.0, "um/s": 1e-6, "um/min": 1e-6 / 60.0,
    "m2/s": 1.0, "um2/s": 1e-12, "um2/min": 1e-12 / 60.0,
    "mol/m3": 1.0, "mmol/m3": 1e-3, "mM": 1.0, "uM": 1e-3,
    "mol/m4": 1.0,
    "m4/(mol*s)": 1.0, "m4/(mol*min)": 1.0 / 60.0,
    "1/m": 1.0, "1/um": 1e6,
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S*)\s*$")


def parse_quantity(value, field=None):
    """
    Convert a config value to SI. Bare numbers are taken as SI already;
    strings carry a unit suffix, e.g. "12 um" or "0.75 min".
    """
    if isinstance(value, bool):
        raise ConfigError("expected a number or a quantity string", field=field)
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"expected a number or a quantity string, got {type(value).__name__}", field=field)
    match = _QUANTITY.match(value)
    if not match:
        raise ConfigError(f"cannot parse quantity '{value}'", field=field)
    number, unit = match.groups()
    unit = unit.replace(" ", "")
    if unit not in UNIT_FACTORS:
        raise ConfigError(f"unknown unit '{unit}'", field=field)
    return float(number) * UNIT_FACTORS[unit]


# ============================
#  Numerical helpers
# ============================

def matrix_exp(M, ntaylor=12, max_norm=0.5):
    """
    Matrix exponential by scaling and squaring with a truncated Taylor series.
    The number of squarings adapts to the norm of M so that the scaled matrix
    has norm below max_norm.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[1]
    norm = np.linalg.norm(M, ord=np.inf)
    nsquare = max(0, int(math.ceil(math.log2(norm / max_norm)))) if norm > max_norm else 0
    # coefficients of the Taylor expansion
    tc = np.zeros(ntaylor + 1)
    tc[0] = 1.0
    for i in range(ntaylor):
        tc[i + 1] = tc[i] / (i + 1)
    SM = M / 2.0 ** nsquare

    # Horner evaluation of the truncated series
    EM = np.identity(n) * tc[ntaylor]
    for i in range(ntaylor - 1, -1, -1):
        EM = SM @ EM
        EM += np.identity(n) * tc[i]

    for _ in range(nsquare):
        EM = EM @ EM
    return EM


def _cell_nodes(l, n, order):
    t, omega = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (t + 1.0)
    h = l / n
    y = (np.arange(n)[:, None] + t[None, :]) * h
    return y, t, 0.5 * omega * h


def hat_weights(f, l, n, order=4):
    """
    Weights w with w[j] = int_0^l f(y) hat_j(y) dy, hat_j being the
    piecewise-linear hat functions on n uniform cells of [0, l].

    w @ v integrates f against the linear interpolant of the samples v. Each
    cell uses Gauss-Legendre quadrature, so f may vary on scales well below
    the grid spacing.
    """
    y, t, scale = _cell_nodes(l, n, order)
    values = np.asarray(f(y), dtype=float) * scale
    w = np.zeros(n + 1)
    w[:-1] += values @ (1.0 - t)
    w[1:] += values @ t
    return w


def hat_volterra(kernel, l, n, order=4):
    """
    Matrix M with (M @ v)[i] = int_{x_i}^l kernel(x_i, y) v_h(y) dy, v_h the
    linear interpolant of v on the uniform nodes x_i of [0, l].

    kernel(x, y) must broadcast. It is evaluated on every node pair, y < x
    included, and those values are discarded.
    """
    y, t, scale = _cell_nodes(l, n, order)
    x = np.linspace(0.0, l, n + 1)
    right = np.arange(n)[None, :, None] >= np.arange(n + 1)[:, None, None]
    values = np.where(right, kernel(x[:, None, None], y[None, :, :]), 0.0) * scale
    M = np.zeros((n + 1, n + 1))
    M[:, :-1] += values @ (1.0 - t)
    M[:, 1:] += values @ t
    return M


def right_slope(values, h):
    """Second-order one-sided derivative at the last sample."""
    if len(values) < 3:
        raise InvalidStateError("at least 3 grid points are needed for a boundary slope")
    return (3.0 * values[-1] - 4.0 * values[-2] + values[-3]) / (2.0 * h)


def right_slope_stencil(npoints, h):
    """Row vector s with s @ values == right_slope(values, h)."""
    s = np.zeros(npoints)
    s[-1], s[-2], s[-3] = 3.0 / (2.0 * h), -4.0 / (2.0 * h), 1.0 / (2.0 * h)
    return s
