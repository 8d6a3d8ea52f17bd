"""One-mass electric water heater with thermostat hysteresis.

Tank temperature obeys the linear ODE

    dT/dt = -a T + b,   a = (m C_p + W) / C_w,
                        b = (s Q_e + m C_p T_in + W T_a) / C_w

with draw rate ``m`` (lb/hr) and switch state ``s``. For constant ``m`` and
``s`` the solution is closed form, so devices are advanced exactly segment by
segment, switching at the analytic deadband crossing times.

Units: temperatures in degF, time in hours, power in kW.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

# guard against pathological event chatter; a zero-draw device switches at
# most a handful of times per hour
_MAX_EVENTS = 10_000


@dataclass(frozen=True)
class EwhParams:
    T_a: float = 75.0
    T_in: float = 60.0
    T_set: float = 130.0
    deadband: float = 20.0
    C_w: float = 417.11
    C_p: float = 1.0
    W: float = 3.0
    Q_e: float = 15360.0
    P: float = 4.5

    def __post_init__(self):
        for name in ("C_w", "C_p", "W", "Q_e", "P", "deadband"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.T_in < self.lower:
            raise ValueError(
                f"inlet temperature {self.T_in} must lie below the deadband floor {self.lower}"
            )

    @property
    def lower(self) -> float:
        return self.T_set - self.deadband / 2

    @property
    def upper(self) -> float:
        return self.T_set + self.deadband / 2


@dataclass(frozen=True)
class EwhState:
    T_w: float
    s: int

    def __post_init__(self):
        if self.s not in (0, 1):
            raise ValueError(f"switch state must be 0 or 1, got {self.s!r}")


@dataclass(frozen=True)
class ThermalCoefficients:
    a: float  # 1/hr
    b: float  # degF/hr

    @property
    def equilibrium(self) -> float:
        return self.b / self.a


def thermal_coefficients(params: EwhParams, draw_rate: float, s: int) -> ThermalCoefficients:
    if draw_rate < 0:
        raise ValueError(f"draw rate must be non-negative, got {draw_rate}")
    a = (draw_rate * params.C_p + params.W) / params.C_w
    b = (s * params.Q_e + draw_rate * params.C_p * params.T_in + params.W * params.T_a) / params.C_w
    return ThermalCoefficients(a, b)


def advance_temperature(T: float, coeff: ThermalCoefficients, dt: float) -> float:
    """Exact solution of the constant-coefficient ODE after ``dt`` hours."""
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    if coeff.a <= 0:
        raise ValueError("decay rate must be positive")
    # expm1 keeps dt=0 and T=T_inf bit-exact
    return T + (coeff.equilibrium - T) * -math.expm1(-coeff.a * dt)


def time_to_threshold(T: float, coeff: ThermalCoefficients, T_thr: float) -> float | None:
    """Hours until the trajectory from ``T`` reaches ``T_thr``; None if it never does."""
    if coeff.a <= 0:
        raise ValueError("decay rate must be positive")
    if T == T_thr:
        return 0.0
    T_inf = coeff.equilibrium
    den = T_thr - T_inf
    if den == 0:
        return None
    ratio = (T - T_inf) / den
    if ratio < 1:
        return None
    return math.log(ratio) / coeff.a


def apply_hysteresis(state: EwhState, params: EwhParams) -> EwhState:
    if state.T_w >= params.upper:
        s = 0
    elif state.T_w <= params.lower:
        s = 1
    else:
        s = state.s
    return state if s == state.s else replace(state, s=s)


def step_device(state: EwhState, params: EwhParams, draw_rate: float, dt: float) -> EwhState:
    """Advance one device by ``dt`` hours under constant draw, switching exactly.

    A crossing found at t* is applied at t*+: the temperature is pinned to the
    threshold and the switch rule evaluated there, so a step ending exactly on
    a crossing returns the switched state.
    """
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    if draw_rate < 0:
        raise ValueError(f"draw rate must be non-negative, got {draw_rate}")
    if dt == 0:
        return state
    remaining = dt
    for _ in range(_MAX_EVENTS):
        state = apply_hysteresis(state, params)
        coeff = thermal_coefficients(params, draw_rate, state.s)
        target = params.upper if state.s == 1 else params.lower
        t_hit = time_to_threshold(state.T_w, coeff, target)
        if t_hit is None or t_hit > remaining:
            return EwhState(advance_temperature(state.T_w, coeff, remaining), state.s)
        remaining -= t_hit
        state = apply_hysteresis(EwhState(target, state.s), params)
    raise RuntimeError("too many switching events within one step")


# ---------------------------------------------------------------------------
# Vectorised fleet stepping (same arithmetic as step_device, on arrays)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FleetParams:
    """Struct-of-arrays view of many EwhParams, for vectorised stepping."""

    T_a: np.ndarray
    T_in: np.ndarray
    T_set: np.ndarray
    deadband: np.ndarray
    C_w: np.ndarray
    C_p: np.ndarray
    W: np.ndarray
    Q_e: np.ndarray
    P: np.ndarray

    @classmethod
    def from_params(cls, params: Sequence[EwhParams]) -> "FleetParams":
        fields = cls.__dataclass_fields__
        return cls(**{f: np.array([getattr(p, f) for p in params], dtype=float) for f in fields})

    @classmethod
    def concat(cls, fleets: Sequence["FleetParams"]) -> "FleetParams":
        fields = cls.__dataclass_fields__
        return cls(**{f: np.concatenate([getattr(x, f) for x in fleets]) for f in fields})

    def __len__(self) -> int:
        return len(self.P)

    @property
    def lower(self) -> np.ndarray:
        return self.T_set - self.deadband / 2

    @property
    def upper(self) -> np.ndarray:
        return self.T_set + self.deadband / 2


def _hysteresis_arrays(T, s, lower, upper):
    return np.where(T >= upper, 0, np.where(T <= lower, 1, s)).astype(s.dtype)


def step_fleet(
    T: np.ndarray, s: np.ndarray, fleet: FleetParams, draw_rate: np.ndarray | float, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`step_device` over a fleet; returns new ``(T, s)`` arrays."""
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    m = np.broadcast_to(np.asarray(draw_rate, dtype=float), T.shape)
    if np.any(m < 0):
        raise ValueError("draw rate must be non-negative")
    T = np.array(T, dtype=float)
    s = np.array(s, dtype=np.int8)
    if dt == 0:
        return T, s
    lower, upper = fleet.lower, fleet.upper
    a = (m * fleet.C_p + fleet.W) / fleet.C_w
    b_base = (m * fleet.C_p * fleet.T_in + fleet.W * fleet.T_a) / fleet.C_w
    b_heat = fleet.Q_e / fleet.C_w
    remaining = np.full(T.shape, float(dt))
    active = np.ones(T.shape, dtype=bool)
    for _ in range(_MAX_EVENTS):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            return T, s
        Ti = T[idx]
        si = _hysteresis_arrays(Ti, s[idx], lower[idx], upper[idx])
        ai = a[idx]
        T_inf = (b_base[idx] + si * b_heat[idx]) / ai
        target = np.where(si == 1, upper[idx], lower[idx])
        den = target - T_inf
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = (Ti - T_inf) / den
            t_hit = np.where((den != 0) & (ratio >= 1), np.log(ratio) / ai, np.inf)
        t_hit = np.where(Ti == target, 0.0, t_hit)
        rem = remaining[idx]
        hit = t_hit <= rem
        # devices with no crossing left in this step finish here
        done = idx[~hit]
        nd = ~hit
        T[done] = Ti[nd] + (T_inf[nd] - Ti[nd]) * -np.expm1(-ai[nd] * rem[nd])
        s[done] = si[nd]
        hit_idx = idx[hit]
        T[hit_idx] = target[hit]
        remaining[hit_idx] = rem[hit] - t_hit[hit]
        s[hit_idx] = 1 - si[hit]
        active[:] = False
        active[hit_idx] = True
    raise RuntimeError("too many switching events within one step")
