"""Bi-linear cavern thermodynamics for a CAES plant.

Pressures are in bar and the gas constant is in bar*m^3/(kg*K), so none of
the formulas below carry a hidden unit conversion.

Each process (charge, discharge, idle) is written as a pair of
:class:`ProcessEquation` objects, one for temperature and one for pressure.
The forward simulator solves them for the next-step value and the MILP
formulation linearizes the very same term lists, so a corrected term only has
to be added in :func:`process_equations`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

CHARGE = "charge"
DISCHARGE = "discharge"
IDLE = "idle"
MODES = (CHARGE, DISCHARGE, IDLE)


class CavernError(ValueError):
    """Raised for invalid cavern parameters or an impossible state update."""


@dataclass(frozen=True)
class CavernParams:
    volume: float                   # V_s, m^3
    wall_area: float                # A_c, m^2
    heat_transfer: float            # h_c, W/(m^2 K)
    wall_temperature: float         # T_RW, K
    inlet_temperature: float        # T_in, K
    inlet_pressure: float           # p_in, bar
    cv: float                       # J/(kg K)
    gas_constant: float             # R, bar m^3/(kg K)
    m_av0: float                    # average stored mass, kg
    dt: float                       # s
    p_min: float
    p_max: float
    T_min: float
    T_max: float
    c_ain: float                    # kg/s per MW of charging power
    c_aout: float                   # kg/s per MW of discharging power
    pch_min: float
    pch_max: float
    pdch_min: float
    pdch_max: float
    T_con: float                    # constant-temperature model, K
    k: float = 1.4
    t_switch: int = 0

    def __post_init__(self) -> None:
        problems = self.violations()
        if problems:
            raise CavernError("; ".join(problems))

    def violations(self) -> list[str]:
        out = []
        positive = {
            "volume": self.volume, "wall_temperature": self.wall_temperature,
            "inlet_temperature": self.inlet_temperature,
            "inlet_pressure": self.inlet_pressure, "cv": self.cv,
            "gas_constant": self.gas_constant, "m_av0": self.m_av0,
            "dt": self.dt, "p_min": self.p_min, "T_min": self.T_min,
            "c_ain": self.c_ain, "c_aout": self.c_aout, "T_con": self.T_con,
            "pch_max": self.pch_max, "pdch_max": self.pdch_max,
        }
        for name, value in positive.items():
            if not value > 0:
                out.append(f"{name} must be positive (got {value})")
        # h_c = 0 is the adiabatic limit and stays allowed
        for name, value in (("heat_transfer", self.heat_transfer), ("wall_area", self.wall_area)):
            if value < 0:
                out.append(f"{name} must be non-negative (got {value})")
        if not self.p_min < self.p_max:
            out.append("p_min must be below p_max")
        if not self.T_min < self.T_max:
            out.append("T_min must be below T_max")
        if not self.k > 1:
            out.append("k must exceed 1")
        if self.t_switch < 0:
            out.append("t_switch must be non-negative")
        if not self.pch_min <= self.pch_max or not self.pdch_min <= self.pdch_max:
            out.append("minimum charge/discharge power exceeds its maximum")
        return out

    def equilibrium_pressure(self, mass: float, temperature: float | None = None) -> float:
        temperature = self.wall_temperature if temperature is None else temperature
        return mass * self.gas_constant * temperature / self.volume

    def mass_from(self, pressure: float, temperature: float) -> float:
        return pressure * self.volume / (self.gas_constant * temperature)


@dataclass(frozen=True)
class CavernCoefficients:
    a2: float
    a3: float
    a4: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float
    c7: float
    c8: float
    c9: float
    c10: float
    c11: float


def derive_coefficients(params: CavernParams) -> CavernCoefficients:
    """Evaluate the a2-a4 and c1-c11 constants of the cavern model.

    c2, c3, c5, c6 and c7 are not referenced by the process equations as
    printed; they are kept so a corrected term can use them.
    """
    k, R, V = params.k, params.gas_constant, params.volume
    dt, m_av0, cv = params.dt, params.m_av0, params.cv
    T_in, p_in, T_rw = params.inlet_temperature, params.inlet_pressure, params.wall_temperature
    if m_av0 <= 0 or cv <= 0 or V <= 0:
        raise CavernError("m_av0, cv and volume must be positive")

    a2 = R**k * T_in**k / (V**k * p_in ** (k - 1))
    a3 = R ** (k - 1) * T_in**k / (V ** (k - 1) * p_in ** (k - 1))
    a4 = params.heat_transfer * params.wall_area * dt / (m_av0 * cv)
    c4 = params.heat_transfer * params.wall_area / cv
    c1 = (k - 2) * dt - 0.5 * (k - 2) * dt**2 / (cv * m_av0)
    c2 = a3 * dt * (k - 1) * m_av0 ** (k - 2) - (k - 2) * m_av0 ** (k - 3) * (c4 / 2) * a3 * dt**2
    c3 = a3 * dt * m_av0 ** (k - 1) - c2 * m_av0 - m_av0 ** (k - 2) * c4 * 0.5 * a3 * dt**2
    c5 = -0.5 * c4 * (k - 1) * dt**2 * R / V
    c6 = c4 * T_rw * dt * R / V
    c7 = 0.5 * c4 * T_rw * dt**2 * R / V + (1 - k) * a2 * dt * m_av0**k
    c8 = (c4 * dt**2 / (2 * m_av0) - dt) * (k - 1)
    c9 = 0.5 * c4 * R * dt**2 * k / V
    c10 = math.exp(-a4) - a4 * math.exp(-a4)
    c11 = (1 - c10) * R * T_rw / V
    return CavernCoefficients(a2, a3, a4, c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11)


def idle_gain(coeffs: CavernCoefficients, params: CavernParams) -> float:
    """Slope a4*exp(-a4)/m_av0 of the idle decay factor with respect to mass."""
    return coeffs.a4 * math.exp(-coeffs.a4) / params.m_av0


# Symbols used in equation terms. "next" is the post-process value being solved for.
SYMBOLS = ("m", "T", "p", "mdot", "next")


@dataclass(frozen=True)
class ProcessEquation:
    """sum(c*x*y for bilinear) + sum(c*x for linear) + constant == 0."""

    target: str                                     # "T" or "p"
    bilinear: tuple[tuple[float, str, str], ...]
    linear: tuple[tuple[float, str], ...] = ()
    constant: float = 0.0

    def residual(self, values: dict[str, float]) -> float:
        total = self.constant
        for c, a, b in self.bilinear:
            total += c * values[a] * values[b]
        for c, a in self.linear:
            total += c * values[a]
        return total

    def solve_next(self, values: dict[str, float]) -> float:
        slope = 0.0
        rest = self.constant
        for c, a, b in self.bilinear:
            if a == "next" and b == "next":
                raise CavernError("equation is quadratic in the next-step value")
            if a == "next":
                slope += c * values[b]
            elif b == "next":
                slope += c * values[a]
            else:
                rest += c * values[a] * values[b]
        for c, a in self.linear:
            if a == "next":
                slope += c
            else:
                rest += c * values[a]
        if slope == 0.0:
            raise CavernError(f"cannot solve for next {self.target}: zero coefficient (m <= 0?)")
        return -rest / slope


def process_equations(mode: str, coeffs: CavernCoefficients,
                      params: CavernParams) -> tuple[ProcessEquation, ProcessEquation]:
    """Temperature and pressure equations of one process as printed.

    The charge temperature equation carries three bilinear terms and the
    charge pressure equation four; both are stated to have one more term that
    did not survive typesetting. Idle follows the first-order expansion of the
    wall heat exchange around m_av0, which includes the -gain*T_RW*m term
    needed for (m, T_RW, m*R*T_RW/V) to be a fixed point.
    """
    k, dt = params.k, params.dt
    T_rw, R, V = params.wall_temperature, params.gas_constant, params.volume
    c4 = coeffs.c4
    if mode == CHARGE:
        temp = ProcessEquation(
            "T",
            ((-1.0, "m", "next"), (1.0, "m", "T"), (coeffs.c1, "mdot", "T")),
            constant=c4 * T_rw * dt,
        )
        pres = ProcessEquation(
            "p",
            ((-1.0, "m", "next"), (1.0, "m", "p"), ((k - 1) * dt, "p", "mdot"),
             (coeffs.a2 * dt * k * params.m_av0 ** (k - 1), "m", "mdot")),
        )
    elif mode == DISCHARGE:
        temp = ProcessEquation(
            "T",
            ((-1.0, "m", "next"), (1.0, "m", "T"), (coeffs.c8, "mdot", "T")),
            constant=c4 * dt * T_rw,
        )
        pres = ProcessEquation(
            "p",
            ((-1.0, "m", "next"), (1.0, "m", "p"), (-k * dt, "mdot", "p"),
             (-c4 * R / V * dt, "m", "T"), (coeffs.c9, "mdot", "T")),
        )
    elif mode == IDLE:
        g = idle_gain(coeffs, params)
        temp = ProcessEquation(
            "T",
            ((g, "m", "T"),),
            ((-g * T_rw, "m"), (coeffs.c10, "T"), (-1.0, "next")),
            constant=(1 - coeffs.c10) * T_rw,
        )
        pres = ProcessEquation(
            "p",
            ((g, "m", "p"), (-g * R * T_rw / V, "m", "m")),
            ((coeffs.c10, "p"), (coeffs.c11, "m"), (-1.0, "next")),
        )
    else:
        raise CavernError(f"unknown mode {mode!r}")
    return temp, pres


@dataclass(frozen=True)
class CavernState:
    m: float
    T: float
    p: float

    def __post_init__(self) -> None:
        if not (self.m > 0 and self.T > 0 and self.p > 0):
            raise CavernError(f"non-physical cavern state {self}")


def flows_from_power(p_ch: float, p_dch: float, params: CavernParams) -> tuple[float, float]:
    if p_ch < 0 or p_dch < 0:
        raise CavernError("charging and discharging power must be non-negative")
    if p_ch > 0 and p_dch > 0:
        raise CavernError("cannot charge and discharge in the same interval")
    return params.c_ain * p_ch, params.c_aout * p_dch


def _step(mode: str, state: CavernState, mdot: float, coeffs: CavernCoefficients,
          params: CavernParams) -> CavernState:
    if state.m <= 0:
        raise CavernError("cavern mass must be positive")
    if mdot < 0:
        raise CavernError("mass flow must be non-negative")
    temp_eq, pres_eq = process_equations(mode, coeffs, params)
    values = {"m": state.m, "T": state.T, "p": state.p, "mdot": mdot, "next": 0.0}
    T_next = temp_eq.solve_next(values)
    p_next = pres_eq.solve_next(values)
    if mode == CHARGE:
        m_next = state.m + mdot * params.dt
    elif mode == DISCHARGE:
        m_next = state.m - mdot * params.dt
    else:
        m_next = state.m
    if m_next <= 0:
        raise CavernError("discharge would empty the cavern")
    return CavernState(m_next, T_next, p_next)


def step_charge(state: CavernState, mdot_in: float, coeffs: CavernCoefficients,
                params: CavernParams) -> CavernState:
    return _step(CHARGE, state, mdot_in, coeffs, params)


def step_discharge(state: CavernState, mdot_out: float, coeffs: CavernCoefficients,
                   params: CavernParams) -> CavernState:
    if state.m - mdot_out * params.dt <= 0:
        raise CavernError("discharge would empty the cavern")
    return _step(DISCHARGE, state, mdot_out, coeffs, params)


def step_idle(state: CavernState, coeffs: CavernCoefficients, params: CavernParams) -> CavernState:
    return _step(IDLE, state, 0.0, coeffs, params)


@dataclass
class Trajectory:
    states: list[CavernState]
    modes: list[str]
    mdot_in: list[float]
    mdot_out: list[float]
    violations: list[int] = field(default_factory=list)

    @property
    def first_violation(self) -> int | None:
        return self.violations[0] if self.violations else None

    @property
    def pressures(self) -> list[float]:
        return [s.p for s in self.states]

    @property
    def temperatures(self) -> list[float]:
        return [s.T for s in self.states]

    @property
    def masses(self) -> list[float]:
        return [s.m for s in self.states]


def mode_of(p_ch: float, p_dch: float) -> str:
    if p_ch > 0:
        return CHARGE
    if p_dch > 0:
        return DISCHARGE
    return IDLE


def simulate(schedule: Iterable[Sequence], initial: CavernState, params: CavernParams,
             coeffs: CavernCoefficients | None = None, tol: float = 0.0) -> Trajectory:
    """Replay a schedule of ``(mode, p_ch, p_dch)`` intervals through the cavern.

    Interval ``t`` (0-based) moves the state from boundary ``t`` to ``t + 1``.
    ``violations`` lists the intervals whose end pressure leaves
    ``[p_min - tol, p_max + tol]``.
    """
    coeffs = derive_coefficients(params) if coeffs is None else coeffs
    states = [initial]
    modes, ins, outs, bad = [], [], [], []
    for t, (mode, p_ch, p_dch) in enumerate(schedule):
        if mode not in MODES:
            raise CavernError(f"interval {t}: unknown mode {mode!r}")
        if (mode == CHARGE and p_dch > 0) or (mode == DISCHARGE and p_ch > 0) or \
                (mode == IDLE and (p_ch > 0 or p_dch > 0)):
            raise CavernError(f"interval {t}: power inconsistent with mode {mode}")
        m_in, m_out = flows_from_power(p_ch, p_dch, params)
        state = states[-1]
        try:
            if mode == CHARGE:
                nxt = step_charge(state, m_in, coeffs, params)
            elif mode == DISCHARGE:
                nxt = step_discharge(state, m_out, coeffs, params)
            else:
                nxt = step_idle(state, coeffs, params)
        except CavernError as exc:
            raise CavernError(f"interval {t}: {exc}") from exc
        states.append(nxt)
        modes.append(mode)
        ins.append(m_in)
        outs.append(m_out)
        if nxt.p < params.p_min - tol or nxt.p > params.p_max + tol:
            bad.append(t)
    return Trajectory(states, modes, ins, outs, bad)


def constant_temp_pressure(mass: float, params: CavernParams) -> float:
    return mass * params.gas_constant * params.T_con / params.volume


def mass_bounds(params: CavernParams) -> tuple[float, float]:
    """Widest mass interval compatible with the pressure and temperature windows."""
    R, V = params.gas_constant, params.volume
    return params.p_min * V / (R * params.T_max), params.p_max * V / (R * params.T_min)


def with_overrides(params: CavernParams, **changes) -> CavernParams:
    return replace(params, **changes)
