"""
Observer and direct backstepping kernels, and the controller gain function phi.

Both kernels are tabulated on the triangle 0 <= x <= y <= l_bar. With
xi = y + x, eta = y - x and the substitution K = G * exp(a (x - y) / 2D) each
kernel turns into the Goursat problem

    G_xi_eta = nu G,   G(xi, 0) = mu xi + gamma1,   (G_xi - G_eta)(s, s) = -kappa G(s, s),

with mu = lambda / 4D and

    observer kernel P:  nu =  mu, kappa = a / 2D
    direct kernel Q:    nu = -mu, kappa = a / 2D - gamma1.

Integrating twice gives the fixed point G = G0 + F[G] with

    G0(xi, eta) = mu (xi - eta) + gamma1 e^{kappa eta} + 2 mu eta exprel(kappa eta)
    F[G](xi, eta) = nu int_0^eta (2 e^{kappa (eta - tau)} - 1) int_0^tau G(tau, s) ds dtau
                  + nu int_0^eta int_s^xi G(tau, s) dtau ds,

which is solved by successive approximations on a uniform (xi, eta) lattice.
The seed G0 reproduces G(xi, 0) exactly. Dropping its gamma1 e^{kappa eta}
term breaks the boundary condition at eta = 0.
"""
import json
import math
import hashlib
import logging
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.integrate import cumulative_trapezoid, simpson
from scipy.interpolate import RegularGridInterpolator, CubicHermiteSpline
from scipy.special import exprel

from config import KERNEL_GRID_N, KERNEL_TOL, KERNEL_MAX_DEPTH
from utils import KernelDomainError, ConvergenceError, InvalidStateError, matrix_exp, require_finite


@dataclass(frozen=True)
class GoursatData:
    mu: float
    nu: float
    kappa: float
    gamma1: float


def goursat_data(params, lambda_, gamma1, kind):
    mu = lambda_ / (4.0 * params.D)
    half_drift = params.a / (2.0 * params.D)
    if kind == "P":
        return GoursatData(mu=mu, nu=mu, kappa=half_drift, gamma1=gamma1)
    if kind == "Q":
        return GoursatData(mu=mu, nu=-mu, kappa=half_drift - gamma1, gamma1=gamma1)
    raise InvalidStateError(f"unknown kernel kind '{kind}'")


def series_bound_constant(params, lambda_, l_bar):
    return 0.5 * lambda_ * (1.0 / params.a + l_bar / params.D) if params.a > 0 else math.inf


def seed(data, xi, eta):
    eta = np.asarray(eta, dtype=float)
    return (data.mu * (np.asarray(xi) - eta) + data.gamma1 * np.exp(data.kappa * eta)
            + 2.0 * data.mu * eta * exprel(data.kappa * eta))


class GoursatLattice:
    """Uniform lattice xi = p h (p <= 2m), eta = q h (q <= m) over the kernel domain."""

    def __init__(self, m, h, kappa):
        self.m = m
        self.h = h
        p = np.arange(2 * m + 1)[:, None]
        q = np.arange(m + 1)[None, :]
        self.inside = (q <= p) & (p + q <= 2 * m)
        self.xi = p * h
        self.eta = q * h
        self._diag = np.arange(m + 1)
        self._memory = self._memory_weights(kappa)

    def _memory_weights(self, kappa):
        """Row q holds trapezoid weights on [0, eta_q] times 2 e^{kappa (eta_q - tau)} - 1."""
        m, h = self.m, self.h
        q = np.arange(m + 1)[:, None]
        t = np.arange(m + 1)[None, :]
        lower = t <= q
        lag = np.where(lower, (q - t) * h, 0.0)
        weights = np.where(lower, h, 0.0)
        weights[:, 0] *= 0.5
        weights[q[:, 0], q[:, 0]] *= 0.5
        weights[0, 0] = 0.0
        return np.where(lower, weights * (2.0 * np.exp(kappa * lag) - 1.0), 0.0)

    def apply(self, G, nu):
        """F[G] on the lattice."""
        m, h, d = self.m, self.h, self._diag
        # I1(tau) = int_0^tau G(tau, s) ds for tau = eta grid
        inner = cumulative_trapezoid(G[:m + 1], dx=h, axis=1, initial=0)[d, d]
        memory = self._memory @ inner
        along = cumulative_trapezoid(G, dx=h, axis=0, initial=0)
        # S(xi, s) = int_s^xi G(tau, s) dtau; the cell below tau = s is cut off here
        strip = along - along[d, d][None, :]
        area = cumulative_trapezoid(strip, dx=h, axis=1, initial=0)
        return np.where(self.inside, nu * (memory[None, :] + area), 0.0)

    def filled(self, G):
        """Copy of G with one ring of planar extrapolation past the domain edges."""
        out = np.array(G, dtype=float)
        m = self.m
        for p in range(m):
            out[p, p + 1] = out[p, p] + out[p + 1, p + 1] - out[p + 1, p]
        for q in range(m):
            p = 2 * m - 1 - q
            if p >= q:
                out[p + 1, q + 1] = out[p + 1, q] + out[p, q + 1] - out[p, q]
        return out


def solve_goursat(data, l_bar, grid_n, tol, max_depth=KERNEL_MAX_DEPTH, bound_constant=None):
    """
    Successive approximations G_{n+1} = F[G_n] from G0 until the sup norm of the
    newest term is below tol. Returns (lattice, G, depth, term_norms, bound_ok).
    """
    m = grid_n - 1
    h = l_bar / m
    lattice = GoursatLattice(m, h, data.kappa)
    term = np.where(lattice.inside, seed(data, lattice.xi, lattice.eta), 0.0)
    total = term.copy()
    term_norms = [float(np.max(np.abs(term)))]
    bound_ok = True
    radius = lattice.xi + lattice.eta
    positive = lattice.inside & (radius > 0)
    log_radius = np.log(np.where(positive, radius, 1.0))

    for n in range(max_depth):
        term = lattice.apply(term, data.nu)
        require_finite("kernel series term is not finite", term=term)
        norm = float(np.max(np.abs(term)))
        term_norms.append(norm)
        if bound_constant is not None and math.isfinite(bound_constant):
            log_bound = (n + 2) * math.log(bound_constant) + (n + 1) * log_radius - math.lgamma(n + 2)
            with np.errstate(divide="ignore"):
                log_term = np.log(np.abs(term))
            if np.any(positive & (log_term > log_bound + 1e-9)):
                bound_ok = False
                logging.warning("Kernel series term %d exceeds its factorial bound", n + 1)
        total += term
        if norm < tol:
            logging.info("Kernel series converged after %d terms (last term %.3g)", n + 1, norm)
            return lattice, total, n + 1, term_norms, bound_ok
    logging.error("Kernel series did not converge in %d terms, last term norm %.3g", max_depth, term_norms[-1])
    raise ConvergenceError(f"kernel series did not converge in {max_depth} terms", term_norms[-1],
                           {"term_norms": np.array(term_norms)})


@dataclass
class KernelTable:
    """
    Tabulated kernel (kind 'P' or 'Q') on the nodes x_i = i l_bar / (grid_n - 1).
    values[i, j] holds K(x_i, x_j) for i <= j and NaN below the diagonal.
    """
    kind: str
    l_bar: float
    grid_n: int
    lambda_: float
    gamma1: float
    values: np.ndarray
    lattice_values: np.ndarray
    truncation_depth: int
    residual_report: dict
    params: object = field(repr=False)
    _interpolator: object = field(default=None, init=False, repr=False, compare=False)
    _series: object = field(default=None, init=False, repr=False, compare=False)

    @property
    def grid(self):
        return np.linspace(0.0, self.l_bar, self.grid_n)

    @property
    def data(self):
        return goursat_data(self.params, self.lambda_, self.gamma1, self.kind)

    def _check_domain(self, x, y):
        slack = 1e-12 * self.l_bar
        if np.any(y > self.l_bar + slack):
            raise KernelDomainError(f"kernel evaluated at y={np.max(y):.6g} beyond l_bar={self.l_bar:.6g}",
                                    {"y": np.atleast_1d(y)})
        if np.any(x < -slack) or np.any(x > y + slack):
            raise KernelDomainError("kernel evaluated outside 0 <= x <= y", {"x": np.atleast_1d(x)})

    def value(self, x, y):
        """Bilinear interpolation of the kernel at (x, y)."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        self._check_domain(x, y)
        if self._interpolator is None:
            filled = np.where(np.isnan(self.values), 0.0, self.values)
            for i in range(self.grid_n - 1):
                filled[i + 1, i] = filled[i, i] + filled[i + 1, i + 1] - filled[i, i + 1]
            self._interpolator = RegularGridInterpolator((self.grid, self.grid), filled, method="linear",
                                                         bounds_error=False, fill_value=None)
        points = np.stack([np.clip(x, 0.0, self.l_bar), np.clip(y, 0.0, self.l_bar)], axis=-1)
        return self._interpolator(points)

    def series_value(self, x, y, nodes=32):
        """
        One application of G0 + F at (x, y) by Gauss-Legendre quadrature over
        the tabulated series. Independent of the lattice interpolation of the
        kernel itself, so it serves as an off-grid check of value().
        """
        self._check_domain(np.asarray(x), np.asarray(y))
        if self._series is None:
            m = self.grid_n - 1
            lattice = GoursatLattice(m, self.l_bar / m, self.data.kappa)
            filled = lattice.filled(self.lattice_values)
            axis_xi = np.arange(2 * m + 1) * lattice.h
            axis_eta = np.arange(m + 1) * lattice.h
            self._series = RegularGridInterpolator((axis_xi, axis_eta), filled, method="linear",
                                                   bounds_error=False, fill_value=None)
        data = self.data
        G = self._series
        xi, eta = float(y + x), float(y - x)
        t, w = np.polynomial.legendre.leggauss(nodes)

        def gauss(lo, hi):
            return lo + 0.5 * (hi - lo) * (t + 1.0), 0.5 * (hi - lo) * w

        value = float(seed(data, xi, eta))
        if eta > 0:
            taus, wt = gauss(0.0, eta)
            memory = 0.0
            area = 0.0
            for tau, weight in zip(taus, wt):
                sig, ws = gauss(0.0, tau)
                inner = np.dot(ws, G(np.column_stack([np.full_like(sig, tau), sig])))
                memory += weight * (2.0 * math.exp(data.kappa * (eta - tau)) - 1.0) * inner
                # tau doubles as the outer variable s here
                ts, wts = gauss(tau, xi)
                area += weight * np.dot(wts, G(np.column_stack([ts, np.full_like(ts, tau)])))
            value += data.nu * (memory + area)
        return value * math.exp(self.params.a * (x - y) / (2.0 * self.params.D))


def _tabulate(lattice_values, params, grid_n, l_bar):
    """Map G back to the (x, y) nodes, K(x_i, x_j) = G[i + j, j - i] e^{a (x_i - x_j) / 2D}."""
    n = grid_n
    x = np.linspace(0.0, l_bar, n)
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    upper = i <= j
    values = np.full((n, n), np.nan)
    values[upper] = lattice_values[(i + j)[upper], (j - i)[upper]]
    values[upper] *= np.exp(params.a * (x[i] - x[j])[upper] / (2.0 * params.D))
    return values


def kernel_residuals(kind, values, params, lambda_, gamma1, l_bar):
    """
    Discrete residuals of the kernel conditions on the tabulation nodes.
    pde: centred differences on interior nodes, divided by lambda max|K|;
    diagonal: absolute; neumann: one-sided second order at x = 0, divided by max|K| / l_bar.
    """
    n = values.shape[0]
    h = l_bar / (n - 1)
    x = np.linspace(0.0, l_bar, n)
    D, a = params.D, params.a
    scale = float(np.nanmax(np.abs(values)))

    i, j = np.meshgrid(np.arange(1, n - 1), np.arange(1, n - 1), indexing="ij")
    interior = i < j
    i, j = i[interior], j[interior]
    K = values
    K_xx = (K[i + 1, j] - 2.0 * K[i, j] + K[i - 1, j]) / h ** 2
    K_yy = (K[i, j + 1] - 2.0 * K[i, j] + K[i, j - 1]) / h ** 2
    K_x = (K[i + 1, j] - K[i - 1, j]) / (2.0 * h)
    K_y = (K[i, j + 1] - K[i, j - 1]) / (2.0 * h)
    if kind == "P":
        pde = D * (K_yy - K_xx) + a * (K_x + K_y) - lambda_ * K[i, j]
    else:
        pde = D * K_xx - a * K_x - D * K_yy - a * K_y - lambda_ * K[i, j]

    diagonal = np.diag(K) - (lambda_ * x / (2.0 * D) + gamma1)
    cols = np.arange(2, n)
    slope = (-3.0 * K[0, cols] + 4.0 * K[1, cols] - K[2, cols]) / (2.0 * h)
    if kind == "Q":
        slope = slope - gamma1 * K[0, cols]

    return {
        "pde": float(np.max(np.abs(pde))) / (lambda_ * scale) if pde.size else 0.0,
        "diagonal": float(np.max(np.abs(diagonal))),
        "neumann": float(np.max(np.abs(slope))) / (scale / l_bar) if slope.size else 0.0,
    }


def _solve_kernel(kind, params, lambda_, gamma1, l_bar, grid_n, tol, max_depth):
    if not lambda_ > 0:
        raise InvalidStateError(f"lambda must be positive, got {lambda_}")
    if not (l_bar > 0 and tol > 0):
        raise InvalidStateError("l_bar and tol must be positive")
    if grid_n < 3:
        raise InvalidStateError("kernel grid needs at least 3 nodes per axis")
    if gamma1 * params.a < params.D:
        logging.warning("gamma1=%.6g is below D/a; kernel is computed regardless", gamma1)

    data = goursat_data(params, lambda_, gamma1, kind)
    M = series_bound_constant(params, lambda_, l_bar)
    lattice, G, depth, term_norms, bound_terms_ok = solve_goursat(data, l_bar, grid_n, tol, max_depth, M)
    values = _tabulate(G, params, grid_n, l_bar)

    report = kernel_residuals(kind, values, params, lambda_, gamma1, l_bar)
    x = np.linspace(0.0, l_bar, grid_n)[:, None]
    with np.errstate(over="ignore"):
        envelope = M * np.exp(2.0 * M * x)
    report["bound_terms_ok"] = bound_terms_ok
    report["bound_ok"] = bool(np.all((np.abs(values) <= envelope) | np.isnan(values)))
    report["term_norms"] = term_norms
    report["warnings"] = []
    floor = abs(data.nu) * lattice.h ** 2 * float(np.max(np.abs(G)))
    if tol < floor:
        note = f"tol {tol:.3g} is below the quadrature error estimate {floor:.3g} for this grid"
        report["warnings"].append(note)
        logging.info("Kernel %s: %s", kind, note)
    logging.info("Kernel %s on [0, %.6g] with %d nodes: depth %d, residuals pde=%.3g diag=%.3g neumann=%.3g",
                 kind, l_bar, grid_n, depth, report["pde"], report["diagonal"], report["neumann"])

    return KernelTable(kind=kind, l_bar=l_bar, grid_n=grid_n, lambda_=lambda_, gamma1=gamma1,
                       values=values, lattice_values=G, truncation_depth=depth,
                       residual_report=report, params=params)


def solve_observer_kernel(params, lambda_, gamma1, l_bar, grid_n=KERNEL_GRID_N, tol=KERNEL_TOL,
                          max_depth=KERNEL_MAX_DEPTH):
    """Kernel P of the inverse transformation u~ = w~ + int_x^l P(x, y) w~(y) dy."""
    return _solve_kernel("P", params, lambda_, gamma1, l_bar, grid_n, tol, max_depth)


def solve_direct_kernel(params, lambda_, gamma1, l_bar, grid_n=KERNEL_GRID_N, tol=KERNEL_TOL,
                        max_depth=KERNEL_MAX_DEPTH):
    """Kernel Q of the direct transformation w~ = u~ - int_x^l Q(x, y) u~(y) dy."""
    return _solve_kernel("Q", params, lambda_, gamma1, l_bar, grid_n, tol, max_depth)


def evaluate_p1(table, x, l):
    """Observer gain p1(x, l) = D P(x, l)."""
    if l > table.l_bar * (1.0 + 1e-12):
        raise KernelDomainError(f"axon length {l:.6g} exceeds kernel domain l_bar={table.l_bar:.6g}",
                                {"l": np.array([l])})
    return table.params.D * table.value(x, np.full_like(np.asarray(x, dtype=float), l))


def direct_transform(table_Q, u, upto=None):
    """w(x_i) = u(x_i) - int_{x_i}^{l} Q(x_i, y) u(y) dy on the first `upto` table nodes."""
    return u - _volterra(table_Q, u, upto)


def inverse_transform(table_P, w, upto=None):
    """u(x_i) = w(x_i) + int_{x_i}^{l} P(x_i, y) w(y) dy."""
    return w + _volterra(table_P, w, upto)


def _volterra(table, f, upto):
    n = len(f) if upto is None else upto
    x = table.grid[:n]
    out = np.zeros(n)
    for i in range(n - 1):
        out[i] = simpson(table.values[i, i:n] * f[i:n], x=x[i:n])
    return out


def reciprocity_residual(table_P, table_Q):
    """max |P(x,s) - Q(x,s) - int_x^s P(x,y) Q(y,s) dy| / max|P| over node pairs."""
    n = table_P.grid_n
    x = table_P.grid
    worst = 0.0
    for i in range(n - 1):
        for s in range(i + 1, n):
            integral = simpson(table_P.values[i, i:s + 1] * table_Q.values[i:s + 1, s], x=x[i:s + 1])
            worst = max(worst, abs(table_P.values[i, s] - table_Q.values[i, s] - integral))
    return worst / float(np.nanmax(np.abs(table_P.values)))


# ============================
#  Kernel cache
# ============================

def params_hash(params):
    return hashlib.sha256(json.dumps(asdict(params), sort_keys=True).encode()).hexdigest()


def save_kernel_table(table, path):
    np.savez(path, kind=table.kind, l_bar=table.l_bar, grid_n=table.grid_n, lambda_=table.lambda_,
             gamma1=table.gamma1, params_hash=params_hash(table.params), values=table.values,
             lattice_values=table.lattice_values, truncation_depth=table.truncation_depth,
             residual_report=json.dumps(table.residual_report))
    logging.info("Kernel %s written to %s", table.kind, path)


def load_kernel_table(path, kind, params, lambda_, gamma1, l_bar, grid_n):
    """Return the cached table, or None when the file is missing or its header does not match."""
    try:
        with np.load(path, allow_pickle=False) as cached:
            header = (str(cached["kind"]), float(cached["l_bar"]), int(cached["grid_n"]),
                      float(cached["lambda_"]), float(cached["gamma1"]), str(cached["params_hash"]))
            if header != (kind, l_bar, grid_n, lambda_, gamma1, params_hash(params)):
                logging.warning("Kernel cache %s does not match the requested kernel; rebuilding", path)
                return None
            return KernelTable(kind=kind, l_bar=l_bar, grid_n=grid_n, lambda_=lambda_, gamma1=gamma1,
                               values=cached["values"], lattice_values=cached["lattice_values"],
                               truncation_depth=int(cached["truncation_depth"]),
                               residual_report=json.loads(str(cached["residual_report"])), params=params)
    except FileNotFoundError:
        return None
    except (KeyError, ValueError, OSError) as e:
        logging.warning("Kernel cache %s unreadable (%s); rebuilding", path, e)
        return None


def cache_path(base, kind):
    """kernel.npz -> kernel_P.npz / kernel_Q.npz"""
    base = str(base)
    stem = base[:-4] if base.endswith(".npz") else base
    return f"{stem}_{kind}.npz"


def observer_kernel(params, lambda_, gamma1, l_bar, grid_n=KERNEL_GRID_N, tol=KERNEL_TOL, cache=None):
    if cache:
        table = load_kernel_table(cache_path(cache, "P"), "P", params, lambda_, gamma1, l_bar, grid_n)
        if table is not None:
            logging.info("Kernel P loaded from cache %s", cache)
            return table
    table = solve_observer_kernel(params, lambda_, gamma1, l_bar, grid_n, tol)
    if cache:
        save_kernel_table(table, cache_path(cache, "P"))
    return table


# ============================
#  Controller gain function
# ============================

@dataclass
class PhiGain:
    """
    phi(x) for x in [-l_bar, 0]: [phi(x)^T, phi'(x)^T] = lead_row e^{N1 x}.
    Values are tabulated on a uniform node set and evaluated with cubic
    Hermite interpolation using the exact slopes lead_row e^{N1 x} N1.
    """
    N1: np.ndarray
    lead_row: np.ndarray
    l_bar: float
    nodes: int = 513
    _spline: object = field(default=None, init=False, repr=False, compare=False)

    def exact(self, x):
        """Row lead_row e^{N1 x} by scaling and squaring."""
        return self.lead_row @ matrix_exp(self.N1 * x)

    def _table(self):
        if self._spline is None:
            x = np.linspace(-self.l_bar, 0.0, self.nodes)
            Z = np.array([self.exact(xk) for xk in x])
            require_finite("phi tabulation is not finite", Z=Z)
            self._spline = CubicHermiteSpline(x, Z, Z @ self.N1, axis=0)
        return self._spline

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x > 1e-12 * self.l_bar) or np.any(x < -self.l_bar * (1.0 + 1e-12)):
            raise KernelDomainError(f"phi evaluated outside [-{self.l_bar:.6g}, 0]", {"x": np.atleast_1d(x)})
        return np.clip(x, -self.l_bar, 0.0)

    def phi(self, x):
        return self._table()(self._check(x))[..., :2]

    def dphi(self, x):
        return self._table()(self._check(x))[..., 2:]


def phi_matrix(model, D):
    p = model.params
    BH = np.outer(model.B, model.H)
    I = np.identity(2)
    N1 = np.zeros((4, 4))
    N1[:2, 2:] = (p.g * I + model.A + (p.a / D) * BH) / D
    N1[2:, :2] = I
    N1[2:, 2:] = (p.a * I - BH) / D
    return N1


def build_phi(model, K, D=None, l_bar=None, nodes=513):
    """
    Assemble N1 and the lead row [H^T, K^T - (1/D) H^T B H^T]; phi is
    tabulated on [-l_bar, 0].
    """
    D = model.params.D if D is None else D
    if l_bar is None or not l_bar > 0:
        raise InvalidStateError("build_phi needs a positive l_bar")
    K = np.asarray(K, dtype=float)
    if not np.all(np.isfinite(K)):
        raise InvalidStateError("controller gains K must be finite")
    lead = np.concatenate([model.H, K - float(model.H @ model.B) * model.H / D])
    return PhiGain(N1=phi_matrix(model, D), lead_row=lead, l_bar=l_bar, nodes=nodes)
