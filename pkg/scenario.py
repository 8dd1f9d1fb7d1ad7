"""
Scenario configuration and the lockstep plant / observer / controller run.
"""
import re
import math
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field

import numpy as np

from analysis import h1_norm, phi_norms, speed_bound, SpeedMonitor
from config import (NOMINAL_PARAMS, SETPOINT_LENGTH, INITIAL_LENGTH, DEFAULT_GAINS, GRID_N, TIME_STEP,
                    OUTPUT_EVERY, KERNEL_GRID_N, KERNEL_TOL, SETTLE_RATE, KERNEL_CACHE)
from controller import law_weights, to_control
from kernels import observer_kernel, build_phi
from model import (BiophysicalParams, GainConfig, steady_state_profile, linearize, check_gains,
                   nearest_admissible_gains, to_error_coords)
from observer import ObserverState, observer_response, observer_step, observer_error
from simulator import PlantState, PLANT_MODELS, plant_response, measure
from utils import ConfigError, InvalidStateError, KernelDomainError, parse_quantity

MODES = ("closed-loop", "open-loop-observer", "plant-only")
OBSERVER_INITS = ("zero", "exact")

# section -> {key: kind}; kind "q" is a quantity, "i" an integer, "s" a string, "b" a boolean
SCHEMA = {
    "params": {"D": "q", "a": "q", "g": "q", "r_g": "q", "r_g_tilde": "q", "l_c": "q", "c_inf": "q"},
    "setpoint": {"l_s": "q"},
    "initial": {"l0": "q", "c0": "c", "c_c0": "c", "observer": "s"},
    "gains": {"lambda": "q", "gamma1": "q", "gamma2": "q", "k1": "q", "k2": "q", "l1": "q", "l2": "q",
              "substitute": "b", "settle_rate": "q"},
    "numerics": {"n": "i", "dt": "q", "output_every": "q", "profile_every": "q", "kernel_grid_n": "i",
                 "kernel_tol": "q", "l_bar": "q", "plant_model": "s", "clamp_influx": "b"},
    "run": {"t_final": "q", "mode": "s", "q_s": "q", "kernel_cache": "s"},
}


@dataclass(frozen=True)
class ScenarioConfig:
    params: BiophysicalParams = field(default_factory=BiophysicalParams.nominal)
    l_s: float = SETPOINT_LENGTH
    l0: float = INITIAL_LENGTH
    c0: object = 2.0 * NOMINAL_PARAMS["c_inf"]
    c_c0: object = None
    observer_init: str = "zero"
    gains: GainConfig = field(default_factory=GainConfig.nominal)
    substitute_gains: bool = True
    settle_rate: float = SETTLE_RATE
    n: int = GRID_N
    dt: float = TIME_STEP
    t_final: float = 180.0
    output_every: float = OUTPUT_EVERY
    profile_every: float = 15.0
    mode: str = "closed-loop"
    plant_model: str = "nonlinear"
    clamp_influx: bool = False
    q_s: object = None
    kernel_grid_n: int = KERNEL_GRID_N
    kernel_tol: float = KERNEL_TOL
    l_bar: object = None
    kernel_cache: object = KERNEL_CACHE

    def __post_init__(self):
        if self.l_bar is None:
            object.__setattr__(self, "l_bar", 2.0 * self.l_s)
        checks = [
            (self.mode in MODES, "run.mode", f"mode must be one of {MODES}"),
            (self.plant_model in PLANT_MODELS, "numerics.plant_model", f"plant_model must be one of {PLANT_MODELS}"),
            (self.observer_init in OBSERVER_INITS, "initial.observer", f"observer must be one of {OBSERVER_INITS}"),
            (self.t_final > 0, "run.t_final", "t_final must be positive"),
            (self.dt > 0, "numerics.dt", "dt must be positive"),
            (self.dt <= self.t_final, "numerics.dt", "dt must not exceed t_final"),
            (self.n >= 2, "numerics.n", "n must be at least 2 intervals"),
            (self.output_every >= self.dt, "numerics.output_every", "output_every must be at least dt"),
            (self.kernel_grid_n >= 3, "numerics.kernel_grid_n", "kernel_grid_n must be at least 3"),
            (self.l_s > 0, "setpoint.l_s", "l_s must be positive"),
            (0 < self.l0 <= self.l_bar, "initial.l0", "l0 must lie in (0, l_bar]"),
            (self.l_s <= self.l_bar, "numerics.l_bar", "l_bar must not be below l_s"),
        ]
        for ok, name, message in checks:
            if not ok:
                raise ConfigError(message, field=name)

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, "rb") as f:
                raw = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read {path}: {e.strerror}") from e
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ConfigError(f"{path} is not UTF-8 text: {e}") from e
        return cls.from_text(text)

    @classmethod
    def from_text(cls, text):
        try:
            mapping = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            match = re.search(r"line (\d+)", str(e))
            raise ConfigError(str(e), line=int(match.group(1)) if match else None) from e
        return cls.from_mapping(mapping, text)

    @classmethod
    def from_mapping(cls, mapping, text=None):
        values = {}
        for section, entries in mapping.items():
            if section not in SCHEMA:
                raise ConfigError("unknown section", field=section, line=_line_of(text, section, None))
            if not isinstance(entries, dict):
                raise ConfigError("expected a table", field=section, line=_line_of(text, section, None))
            for key, value in entries.items():
                name = f"{section}.{key}"
                kind = SCHEMA[section].get(key)
                if kind is None:
                    raise ConfigError("unknown key", field=name, line=_line_of(text, section, key))
                try:
                    values[name] = _convert(kind, value, name)
                except ConfigError as e:
                    raise ConfigError(e.message, field=name,
                                      line=_line_of(text, section, key)) from e

        kwargs = {}
        base = NOMINAL_PARAMS.copy()
        base.update({key: values[f"params.{key}"] for key in SCHEMA["params"] if f"params.{key}" in values})
        try:
            kwargs["params"] = BiophysicalParams(**base)
        except InvalidStateError as e:
            raise ConfigError(str(e), field="params") from e

        simple = {
            "setpoint.l_s": "l_s", "initial.l0": "l0", "initial.c0": "c0", "initial.c_c0": "c_c0",
            "initial.observer": "observer_init", "gains.substitute": "substitute_gains",
            "gains.settle_rate": "settle_rate", "numerics.n": "n", "numerics.dt": "dt",
            "numerics.output_every": "output_every", "numerics.profile_every": "profile_every",
            "numerics.kernel_grid_n": "kernel_grid_n", "numerics.kernel_tol": "kernel_tol",
            "numerics.l_bar": "l_bar", "numerics.plant_model": "plant_model",
            "numerics.clamp_influx": "clamp_influx", "run.t_final": "t_final", "run.mode": "mode",
            "run.q_s": "q_s", "run.kernel_cache": "kernel_cache",
        }
        for name, attr in simple.items():
            if name in values:
                kwargs[attr] = values[name]
        if "initial.c0" not in values:
            kwargs["c0"] = 2.0 * kwargs["params"].c_inf
        for attr in ("c0", "c_c0"):
            value = kwargs.get(attr)
            if isinstance(value, tuple):
                kwargs[attr] = value[0] * kwargs["params"].c_inf

        k = DEFAULT_GAINS["K"]
        gl = DEFAULT_GAINS["L"]
        try:
            kwargs["gains"] = GainConfig(
                lambda_=values.get("gains.lambda", DEFAULT_GAINS["lambda"]),
                gamma1=values.get("gains.gamma1", DEFAULT_GAINS["gamma1"]),
                gamma2=values.get("gains.gamma2", DEFAULT_GAINS["gamma2"]),
                K=(values.get("gains.k1", k[0]), values.get("gains.k2", k[1])),
                L=(values.get("gains.l1", gl[0]), values.get("gains.l2", gl[1])),
            )
        except InvalidStateError as e:
            raise ConfigError(str(e), field="gains") from e

        config = cls(**kwargs)
        config.gain_report()
        return config

    def equilibrium(self):
        return steady_state_profile(self.params, self.l_s)

    def gain_report(self):
        eq = self.equilibrium()
        return check_gains(linearize(self.params, eq), self.gains)


def _convert(kind, value, name):
    if kind == "q":
        return parse_quantity(value, field=name)
    if kind == "i":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("expected an integer", field=name)
        return value
    if kind == "b":
        if not isinstance(value, bool):
            raise ConfigError("expected true or false", field=name)
        return value
    if kind == "s":
        if not isinstance(value, str):
            raise ConfigError("expected a string", field=name)
        return value
    # concentration: quantity, "equilibrium", or a multiple of c_inf such as "2 c_inf"
    if isinstance(value, str):
        text = value.strip()
        if text == "equilibrium":
            return None
        if text.endswith("c_inf"):
            factor = text[:-len("c_inf")].strip().rstrip("*").strip() or "1"
            return (parse_quantity(factor, field=name),)
    return parse_quantity(value, field=name)


def _line_of(text, section, key):
    """Line number of [section] (key None) or of `key =` inside it, if text is available."""
    if text is None:
        return None
    current = None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        header = re.match(r"^\[\s*([^\]]+?)\s*\]", stripped)
        if header:
            current = header.group(1)
            if key is None and current == section:
                return number
            continue
        if key is not None and current == section and re.match(rf"^{re.escape(key)}\s*=", stripped):
            return number
    return None


# ============================
#  Run
# ============================

TRACE_COLUMNS = ("t", "l", "c_c", "y1", "y2", "U", "q_s", "h1_u", "h1_uhat", "h1_tilde",
                 "X_norm", "X_hat_norm", "X_tilde_norm", "phi_tilde", "phi", "estimate_error")


@dataclass
class Profile:
    t: float
    x: np.ndarray
    c: np.ndarray
    c_hat: np.ndarray
    c_eq: np.ndarray


@dataclass
class SimulationTrace:
    rows: list = field(default_factory=list)
    profiles: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    plant: object = None
    observer: object = None

    def column(self, name):
        return np.array([row[TRACE_COLUMNS.index(name)] for row in self.rows])


def initial_states(config, eq):
    n = config.n
    if config.c0 is None:
        x = np.linspace(0.0, 1.0, n + 1) * config.l0
        c = np.asarray(eq.value(x), dtype=float)
        c_c = float(c[-1]) if config.c_c0 is None else config.c_c0
        c[-1] = c_c
        plant = PlantState(c=c, c_c=c_c, l=config.l0)
    else:
        c_c = config.c0 if config.c_c0 is None else config.c_c0
        plant = PlantState.uniform(n, config.c0, c_c, config.l0)
    if config.observer_init == "exact":
        u, X = to_error_coords(plant.c, plant.c_c, plant.l, eq)
        obs = ObserverState(u_hat=u, X_hat=X)
    else:
        obs = ObserverState.zero_estimate(n, plant.l, eq)
    return plant, obs


def _record(trace, plant, obs, eq, U, q_s, y1, y2, with_observer):
    u, X = to_error_coords(plant.c, plant.c_c, plant.l, eq)
    h1_u = h1_norm(u, plant.l)
    phi_tilde, phi = phi_norms(plant, obs if with_observer else None, eq)
    if with_observer:
        u_tilde, X_tilde = observer_error(plant, obs, eq)
        h1_uhat = h1_norm(obs.u_hat, plant.l)
        h1_tilde = h1_norm(u_tilde, plant.l)
        X_hat_norm = float(np.linalg.norm(obs.X_hat))
        X_tilde_norm = float(np.linalg.norm(X_tilde))
        estimate_error = float(np.max(np.abs(u_tilde)))
    else:
        h1_uhat = h1_tilde = X_hat_norm = X_tilde_norm = estimate_error = math.nan
    trace.rows.append((plant.t, plant.l, plant.c_c, y1, y2, U, q_s, h1_u, h1_uhat, h1_tilde,
                       float(np.linalg.norm(X)), X_hat_norm, X_tilde_norm, phi_tilde, phi, estimate_error))


def _snapshot(trace, plant, obs, eq, with_observer):
    x = plant.x
    c_eq = np.asarray(eq.value(x), dtype=float)
    c_hat = obs.u_hat + c_eq if with_observer else np.full_like(x, math.nan)
    trace.profiles.append(Profile(t=plant.t, x=x, c=plant.c.copy(), c_hat=c_hat, c_eq=c_eq))


def run_scenario(config, kernel=None):
    """
    Run plant, observer and controller in lockstep and return the trace.

    In closed loop the plant and observer steps are affine in U and the law is
    a linear functional of (u_hat, X_hat), so each step solves the scalar
    equation U = law(u_hat(U), X_hat(U)) at the new time level.
    """
    params = config.params
    eq = config.equilibrium()
    model = linearize(params, eq)
    gains = config.gains
    substituted = False
    if config.mode == "closed-loop" and config.substitute_gains:
        gains, substituted = nearest_admissible_gains(model, gains, config.dt, config.settle_rate)
    else:
        check_gains(model, gains)

    with_observer = config.mode != "plant-only"
    if with_observer and kernel is None:
        kernel = observer_kernel(params, gains.lambda_, gains.gamma1, config.l_bar, config.kernel_grid_n,
                                 config.kernel_tol, cache=config.kernel_cache)
    phi = build_phi(model, gains.K, params.D, config.l_bar) if config.mode == "closed-loop" else None

    plant, obs = initial_states(config, eq)
    q_s_star = eq.q_s_star
    fixed_q_s = q_s_star if config.q_s is None else config.q_s
    monitor = SpeedMonitor(speed_bound(params, gains, config.l_bar))

    meas = measure(plant, eq)
    if phi is not None:
        control = to_control(law_weights(plant.l, config.n, phi, model, gains)(obs.u_hat, obs.X_hat),
                             q_s_star, config.clamp_influx, 0.0)
    else:
        control = to_control(q_s_star - fixed_q_s, q_s_star)

    trace = SimulationTrace()
    trace.metadata.update({
        "mode": config.mode, "plant_model": config.plant_model, "gains": gains,
        "gains_substituted": substituted, "speed_bound": monitor.bound, "q_s_star": q_s_star,
        "kernel_depth": kernel.truncation_depth if kernel is not None else None,
    })
    steps = int(round(config.t_final / config.dt))
    output_stride = max(1, int(round(config.output_every / config.dt)))
    profile_stride = max(1, int(round(config.profile_every / config.dt)))
    logging.info("Scenario %s: %d steps of %.3g s on %d intervals, l_bar=%.6g m",
                 config.mode, steps, config.dt, config.n, config.l_bar)

    _record(trace, plant, obs, eq, control.U, control.q_s, meas.y1, meas.y2, with_observer)
    _snapshot(trace, plant, obs, eq, with_observer)
    clamps = 0
    for step in range(1, steps + 1):
        response = plant_response(plant, params, config.dt, eq, config.plant_model)
        if response.l > config.l_bar:
            logging.error("Axon length %.6g m exceeds l_bar=%.6g m at t=%.6g s", response.l, config.l_bar, response.t)
            raise KernelDomainError(f"axon length {response.l:.6g} exceeds l_bar={config.l_bar:.6g}",
                                    {"l": np.array([response.l])})
        monitor.check(response.t, response.l_dot)
        y2 = response.l - eq.l_s
        # the observer runs on the measured length and its rate
        l_meas = y2 + eq.l_s
        l_dot_meas = (y2 - meas.y2) / config.dt

        if config.mode == "closed-loop":
            y1_free, y1_per_q = response.measurement_slope(eq)
            pending = observer_response(obs, y1_free + q_s_star * y1_per_q, y2, l_meas, l_dot_meas, kernel,
                                        model, gains, config.dt, dy1_dU=-y1_per_q)
            law = law_weights(l_meas, config.n, phi, model, gains)
            denominator = 1.0 - law(pending.gain_u, pending.gain_X)
            if abs(denominator) < 1e-12:
                raise InvalidStateError(f"closed-loop input equation is singular at t={response.t:.6g}")
            control = to_control(law(pending.base_u, pending.base_X) / denominator, q_s_star,
                                 config.clamp_influx, response.t)
            clamps += control.clamped
            plant = response.at(control.q_s)
            obs = pending.at(control.U)
            meas = measure(plant, eq)
        else:
            plant = response.at(fixed_q_s)
            meas = measure(plant, eq)
            if with_observer:
                obs = observer_step(obs, meas, control.U, l_meas, l_dot_meas, kernel, model, gains, config.dt)

        if step % output_stride == 0 or step == steps:
            _record(trace, plant, obs, eq, control.U, control.q_s, meas.y1, meas.y2, with_observer)
        if step % profile_stride == 0 or step == steps:
            _snapshot(trace, plant, obs, eq, with_observer)

    if monitor.violations:
        logging.warning("Growth speed bound %.3g m/s violated on %d of %d steps (first at t=%.6g s)",
                        monitor.bound, monitor.violations, steps, monitor.first)
    trace.metadata.update({"speed_violations": monitor.violations, "first_speed_violation": monitor.first,
                           "clamp_events": clamps, "steps": steps})
    trace.plant = plant
    trace.observer = obs if with_observer else None
    logging.info("Scenario finished at t=%.6g s: l=%.6g m, c_c=%.6g mol/m^3", plant.t, plant.l, plant.c_c)
    return trace
