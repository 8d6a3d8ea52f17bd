"""Under-frequency droop response by frequency-threshold dispersion.

The aggregator orders the on-devices (ascending id) and gives device ``i`` the
threshold

    w_i = w_u - (w_u - w_l) * (P_1 + ... + P_i) / P_sigma

A device switches off when the measured frequency is at or below its
threshold, so the shed power is a staircase approximation of the linear
droop line between ``w_u`` (no reduction) and ``w_l`` (everything shed).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np

EVENT_HEADER = ("t_min", "omega_hz")


@dataclass(frozen=True)
class DroopBand:
    omega_u: float
    omega_l: float
    omega_0: float = 60.0

    def __post_init__(self):
        if not self.omega_l < self.omega_u <= self.omega_0:
            raise ValueError(
                f"band must satisfy omega_l < omega_u <= omega_0, got "
                f"({self.omega_l}, {self.omega_u}, {self.omega_0})"
            )

    def depth(self, omega: float) -> float:
        """Fraction of the band traversed at ``omega``, clamped to [0, 1]."""
        x = (self.omega_u - omega) / (self.omega_u - self.omega_l)
        return min(1.0, max(0.0, x))


@dataclass(frozen=True)
class ThresholdAssignment:
    device_ids: tuple
    powers: np.ndarray  # kW, in assignment order
    thresholds: np.ndarray  # Hz, strictly decreasing
    band: DroopBand

    @property
    def total_on_power(self) -> float:
        return float(self.powers.sum())

    @property
    def max_power(self) -> float:
        return float(self.powers.max())


def assign_thresholds(on_devices: Iterable[tuple[object, float]], band: DroopBand) -> ThresholdAssignment:
    """Thresholds for the given ``(id, P_kW)`` on-devices, ordered by ascending id."""
    devices = sorted(on_devices, key=lambda d: d[0])
    if not devices:
        raise ValueError("no on-devices to assign thresholds to")
    powers = np.array([float(p) for _, p in devices])
    if np.any(~(powers > 0)):
        raise ValueError("device powers must be strictly positive")
    cum = np.cumsum(powers)
    # dividing by cum[-1] makes the last share exactly 1
    thr = band.omega_u - (band.omega_u - band.omega_l) * (cum / cum[-1])
    thr = np.clip(thr, band.omega_l, band.omega_u)
    return ThresholdAssignment(tuple(d[0] for d in devices), powers, thr, band)


def respond_to_frequency(assign: ThresholdAssignment, omega: float) -> set:
    """Ids of devices whose threshold is reached (``omega <= threshold``)."""
    hit = omega <= assign.thresholds
    return {d for d, h in zip(assign.device_ids, hit) if h}


def shed_power(assign: ThresholdAssignment, omega: float) -> float:
    return float(assign.powers[omega <= assign.thresholds].sum())


def post_event_power(assign: ThresholdAssignment, omega: float) -> float:
    return assign.total_on_power - shed_power(assign, omega)


def target_droop_power(band: DroopBand, omega: float, committed: float, baseline: float) -> float:
    """Power on the ideal droop line after a drop to ``omega``."""
    if committed > baseline:
        raise ValueError(f"committed reduction {committed} exceeds baseline {baseline}")
    return baseline - committed * band.depth(omega)


@dataclass(frozen=True)
class FrequencyEvent:
    t_min: float
    omega_hz: float


def load_event(source: IO[str] | str) -> FrequencyEvent:
    """Read a single-event ``t_min,omega_hz`` file; more than one event is an error."""
    text = source if isinstance(source, str) else source.read()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows or tuple(c.strip() for c in rows[0]) != EVENT_HEADER:
        raise ValueError(f"event file must start with header {','.join(EVENT_HEADER)!r}")
    data = rows[1:]
    if len(data) != 1:
        raise ValueError(f"event file must hold exactly one event per window, found {len(data)}")
    try:
        t, w = (float(c) for c in data[0])
    except ValueError:
        raise ValueError(f"row 2: malformed event {data[0]!r}") from None
    if not (math.isfinite(t) and math.isfinite(w)):
        raise ValueError("row 2: event values must be finite")
    return FrequencyEvent(t, w)


def write_event(event: FrequencyEvent, out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(EVENT_HEADER)
    w.writerow((repr(float(event.t_min)), repr(float(event.omega_hz))))
