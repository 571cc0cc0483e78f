"""Synthetic greenhouse plant and the idealized physics model used by the hybrid predictor.

Two temperature models live here:

1. Idealized physics model (PBM)
   --------------------------------
   Lumped air node driven by heater and ventilation only:

     dT/dt = u_h*Hmax/(rho*V*Cp) - u_f*(Fmax/V)*(T - T_amb)

   with Fmax converted from m^3/h to m^3/s. No losses, perfect heater.
   This is the model the corrective source term is learned against.

2. Truth plant
   -----------
   Stand-in for the physical enclosure. Same structure plus deliberate
   mismatch so the learned correction has real signal:

     dT/dt = eta0*(1 - beta*(T - T_amb))*u_h*Hmax/(rho*V*Cp)
             - u_f*(Fmax/V)*(T - T_amb)
             - k_loss*(T - T_amb)

   eta0 is heater efficiency, beta an efficiency droop with rising
   temperature difference, k_loss a wall-loss rate. Gaussian measurement
   noise is applied to the reported temperature only; the latent state
   stays noise-free.

Both are integrated with RK4 sub-steps of ``dt_int`` inside each control
period: the raw fan term is fast (~0.13 /s at Fmax) and a single explicit
60 s step would be unstable.

Defaults follow the desk-scale asset: 100 W heater, 68 m^3/h fan,
0.5 x 0.5 x 0.6 m enclosure, with mismatch terms sized to give heater-on
equilibria roughly 18 degC above ambient and minute-scale time constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

SANITY_BAND = (-20.0, 80.0)  # degC; simulation aborts outside
DUTY_STEP = 0.05


class PlantSanityError(RuntimeError):
    """Latent temperature left the sanity band; the simulation is not trustworthy."""


def snap_duty(value: float) -> float:
    """Snap a heater duty to the 0.05 grid in [0, 1]; exact halfway rounds down."""
    value = min(1.0, max(0.0, value))
    steps = value / DUTY_STEP
    lower = math.floor(steps)
    frac = steps - lower
    if frac > 0.5 + 1e-9:
        lower += 1
    return round(lower * DUTY_STEP, 2)


@dataclass(frozen=True)
class ControlInput:
    """Actuator command: heater duty on the 0.05 grid plus binary fan state."""

    u_h: float
    u_f: int

    def __post_init__(self):
        steps = self.u_h / DUTY_STEP
        if not (0.0 <= self.u_h <= 1.0) or abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"heater duty {self.u_h!r} is not on the 0.05 grid in [0, 1]")
        if self.u_f not in (0, 1):
            raise ValueError(f"fan state {self.u_f!r} must be 0 or 1")


@dataclass(frozen=True)
class PlantState:
    T: float       # inside temperature, degC
    T_amb: float   # ambient temperature, degC
    t: float = 0.0  # time, s

    def __post_init__(self):
        if not (math.isfinite(self.T) and math.isfinite(self.T_amb) and math.isfinite(self.t)):
            raise ValueError("plant state must be finite")


@dataclass(frozen=True)
class PlantParams:
    rho: float = 1.2          # air density, kg/m^3
    V: float = 0.15           # enclosure volume, m^3 (0.5 x 0.5 x 0.6)
    Cp: float = 1005.0        # specific heat of air, J/(kg*K)
    Hmax: float = 100.0       # heater power, W
    Fmax: float = 68.0        # max airflow, m^3/h
    k_loss: float = 0.01      # wall-loss rate, 1/s
    eta0: float = 0.35        # heater efficiency
    beta: float = 0.004       # efficiency droop, 1/K
    noise_sigma: float = 0.05  # measurement noise, degC
    dt_int: float = 1.0       # internal integration step, s

    def __post_init__(self):
        for name in ("rho", "V", "Cp", "Hmax", "Fmax", "dt_int"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if not (0.0 < self.eta0 <= 1.0):
            raise ValueError("eta0 must be in (0, 1]")
        if self.k_loss < 0 or self.noise_sigma < 0 or self.beta < 0:
            raise ValueError("k_loss, beta and noise_sigma must be non-negative")

    @property
    def heat_gain(self) -> float:
        """Full-power heater rate, degC/s."""
        return self.Hmax / (self.rho * self.V * self.Cp)

    @property
    def fan_rate(self) -> float:
        """Fan exchange rate at full airflow, 1/s."""
        return (self.Fmax / 3600.0) / self.V

    def substeps(self, period: float) -> int:
        n = period / self.dt_int
        if abs(n - round(n)) > 1e-9 or period <= 0:
            raise ValueError(f"period {period} s is not a positive multiple of dt_int {self.dt_int} s")
        return int(round(n))


def pbm_rate(state: PlantState, u: ControlInput, params: PlantParams) -> float:
    """Idealized temperature rate, degC/s: heater input minus fan exchange."""
    return u.u_h * params.heat_gain - u.u_f * params.fan_rate * (state.T - state.T_amb)


def truth_rate(state: PlantState, u: ControlInput, params: PlantParams) -> float:
    """Truth-plant temperature rate including efficiency droop and wall loss."""
    d = state.T - state.T_amb
    heating = params.eta0 * (1.0 - params.beta * d) * u.u_h * params.heat_gain
    return heating - u.u_f * params.fan_rate * d - params.k_loss * d


def _rk4(rate, T: float, T_amb: float, u: ControlInput, params: PlantParams, n: int, h: float) -> float:
    for _ in range(n):
        k1 = rate(PlantState(T, T_amb), u, params)
        k2 = rate(PlantState(T + 0.5 * h * k1, T_amb), u, params)
        k3 = rate(PlantState(T + 0.5 * h * k2, T_amb), u, params)
        k4 = rate(PlantState(T + h * k3, T_amb), u, params)
        T = T + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return T


def pbm_step(T: float, T_amb: float, u: ControlInput, params: PlantParams, period: float = 60.0) -> float:
    """Advance the idealized physics model one control period (no correction)."""
    n = params.substeps(period)
    return _rk4(pbm_rate, T, T_amb, u, params, n, params.dt_int)


def pbm_step_with_source(
    T: float, T_amb: float, u: ControlInput, params: PlantParams, r: float, period: float = 60.0
) -> float:
    """Advance the physics model with a constant corrective source r (degC/s).

    The source is constant over the period, so its contribution integrates
    exactly to r*period; it is composed with the homogeneous solve rather
    than folded into the RK4 stages. This keeps the correction exactly
    linear: stepping with source r shifts the result by precisely r*period.
    """
    return pbm_step(T, T_amb, u, params, period) + r * period


def truth_step(
    state: PlantState,
    u: ControlInput,
    params: PlantParams,
    period: float = 60.0,
    rng: np.random.Generator | None = None,
) -> tuple[PlantState, float]:
    """Advance the truth plant one control period.

    Returns the new latent state and the reported (measured) temperature.
    Measurement noise goes into the report only, never the latent state.
    """
    n = params.substeps(period)
    T = _rk4(truth_rate, state.T, state.T_amb, u, params, n, params.dt_int)
    if not (SANITY_BAND[0] <= T <= SANITY_BAND[1]):
        raise PlantSanityError(
            f"latent temperature {T:.2f} degC left the sanity band {SANITY_BAND} "
            f"at t={state.t + period:.0f} s (u_h={u.u_h}, u_f={u.u_f})"
        )
    new_state = PlantState(T=T, T_amb=state.T_amb, t=state.t + period)
    measured = T
    if rng is not None and params.noise_sigma > 0:
        measured = T + params.noise_sigma * rng.standard_normal()
    return new_state, measured


@dataclass(frozen=True)
class AmbientProfile:
    """Constant ambient, optionally with a slow sinusoidal swing."""

    base: float = 22.6
    amplitude: float = 0.0
    period_s: float = 86400.0

    def at(self, t: float) -> float:
        if self.amplitude == 0.0:
            return self.base
        return self.base + self.amplitude * math.sin(2.0 * math.pi * t / self.period_s)


class TruthPlant:
    """Stateful wrapper around truth_step: owns the latent state and noise source."""

    def __init__(
        self,
        params: PlantParams | None = None,
        ambient: AmbientProfile | None = None,
        initial_T: float | None = None,
        seed: int = 0,
    ):
        self.params = params or PlantParams()
        self.ambient = ambient or AmbientProfile()
        T0 = self.ambient.at(0.0) if initial_T is None else initial_T
        self.state = PlantState(T=T0, T_amb=self.ambient.at(0.0), t=0.0)
        self.rng = np.random.default_rng(seed)
        self.measured = self._measure(self.state.T)

    def _measure(self, T: float) -> float:
        if self.params.noise_sigma > 0:
            return T + self.params.noise_sigma * self.rng.standard_normal()
        return T

    def step(self, u: ControlInput, period: float = 60.0) -> float:
        """Apply controls for one period; returns the new measured temperature."""
        state, _ = truth_step(self.state, u, self.params, period, rng=None)
        self.state = replace(state, T_amb=self.ambient.at(state.t))
        self.measured = self._measure(self.state.T)
        return self.measured


_PARAM_FIELDS = {f: float for f in (
    "rho", "V", "Cp", "Hmax", "Fmax", "k_loss", "eta0", "beta", "noise_sigma", "dt_int",
)}


def parse_config(text: str) -> dict[str, str]:
    """Parse a plain key=value config file body; '#' starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_params(path) -> tuple[PlantParams, AmbientProfile, int]:
    """Load plant parameters, ambient profile and noise seed from a key=value file.

    Unknown keys are rejected so typos do not silently fall back to defaults.
    """
    with open(path) as fh:
        raw = parse_config(fh.read())
    kwargs = {}
    ambient_kwargs = {}
    seed = 0
    for key, value in raw.items():
        if key in _PARAM_FIELDS:
            kwargs[key] = float(value)
        elif key == "ambient_base":
            ambient_kwargs["base"] = float(value)
        elif key == "ambient_amplitude":
            ambient_kwargs["amplitude"] = float(value)
        elif key == "ambient_period_s":
            ambient_kwargs["period_s"] = float(value)
        elif key == "seed":
            seed = int(value)
        else:
            raise ValueError(f"unknown config key {key!r}")
    return PlantParams(**kwargs), AmbientProfile(**ambient_kwargs), seed
