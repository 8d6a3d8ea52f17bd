"""Heterogeneous water-heater populations and seeded Monte Carlo ensembles.

Seeding scheme: replication ``r`` of a run with master seed ``m`` draws its
population from ``np.random.SeedSequence(m, spawn_key=(r,))``, which is what
``SeedSequence(m).spawn(...)[r]`` yields. Replications therefore do not depend
on each other or on execution order.

Within one population the draw order is fixed: one uniform vector of length N
per parameter field (in ``PARAM_FIELDS`` order), then the on-set (a uniform
random subset of exact size ``round_half_up(p0 * N)``), then the initial
temperatures.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field
from typing import IO, Mapping, Sequence

import numpy as np

from .device import EwhParams, EwhState, FleetParams, step_fleet

PARAM_FIELDS = ("T_a", "T_in", "T_set", "deadband", "C_w", "C_p", "W", "Q_e", "P")

# Table of nominal values and uniform half-widths for a residential EWH fleet
NOMINAL_RANGES: dict[str, tuple[float, float]] = {
    "T_a": (75.0 - 2.5, 75.0 + 2.5),
    "T_in": (60.0 - 2.5, 60.0 + 2.5),
    "T_set": (130.0 - 5.0, 130.0 + 5.0),
    "deadband": (20.0, 20.0),
    "C_w": (417.11, 417.11),
    "C_p": (1.0, 1.0),
    "W": (3.0 - 0.25, 3.0 + 0.25),
    "Q_e": (15360.0 - 1706.0, 15360.0 + 1706.0),
    "P": (4.5 - 0.5, 4.5 + 0.5),
}

TRAJECTORY_HEADER = ("replication", "t_min", "P_sigma_kW", "fraction_on")
PROFILE_HEADER = ("time_hr", "flow_lb_per_hr")


def on_count(n: int, fraction: float) -> int:
    """Number of initially-on devices, rounding halves up (0.65 * 50 -> 33)."""
    return int(math.floor(n * fraction + 0.5 + 1e-9))


@dataclass(frozen=True)
class PopulationSpec:
    n: int
    init_on_fraction: float = 1.0
    parameter_ranges: Mapping[str, tuple[float, float]] = field(
        default_factory=lambda: dict(NOMINAL_RANGES)
    )
    # initial temperature is uniform over this sub-interval of the deadband,
    # given as fractions from its floor (0) to its ceiling (1)
    init_temperature: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"ensemble size must be at least 1, got {self.n}")
        if not 0.0 <= self.init_on_fraction <= 1.0:
            raise ValueError(f"init_on_fraction must lie in [0, 1], got {self.init_on_fraction}")
        ranges = dict(NOMINAL_RANGES)
        unknown = set(self.parameter_ranges) - set(PARAM_FIELDS)
        if unknown:
            raise ValueError(f"unknown parameter(s): {sorted(unknown)}")
        ranges.update({k: (float(v[0]), float(v[1])) for k, v in self.parameter_ranges.items()})
        object.__setattr__(self, "parameter_ranges", ranges)
        for name, (lo, hi) in ranges.items():
            if lo > hi:
                raise ValueError(f"range for {name} is inverted: ({lo}, {hi})")
        for name in ("C_w", "C_p", "W", "Q_e", "P", "deadband"):
            if ranges[name][0] <= 0:
                raise ValueError(f"range for {name} must be strictly positive")
        worst_floor = ranges["T_set"][0] - ranges["deadband"][1] / 2
        if not ranges["T_in"][1] < worst_floor:
            raise ValueError("inlet temperature range overlaps the deadband")
        lo, hi = self.init_temperature
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError(f"init_temperature must be a sub-interval of [0, 1], got {self.init_temperature}")

    @property
    def n_on(self) -> int:
        return on_count(self.n, self.init_on_fraction)

    @property
    def realized_on_fraction(self) -> float:
        return self.n_on / self.n

    def digest(self) -> str:
        text = repr((self.n, self.init_on_fraction, sorted(self.parameter_ranges.items()), self.init_temperature))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def replication_seed(master_seed: int, replication: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(replication,))


def sample_fleet(spec: PopulationSpec, seed) -> tuple[FleetParams, np.ndarray, np.ndarray]:
    """Array form of :func:`sample_population`: ``(fleet, T_w, s)``."""
    rng = np.random.default_rng(seed)
    n = spec.n
    cols = {}
    for name in PARAM_FIELDS:
        lo, hi = spec.parameter_ranges[name]
        cols[name] = rng.uniform(lo, hi, size=n)
    fleet = FleetParams(**cols)
    s = np.zeros(n, dtype=np.int8)
    s[rng.choice(n, size=spec.n_on, replace=False)] = 1
    f_lo, f_hi = spec.init_temperature
    frac = rng.uniform(f_lo, f_hi, size=n)
    T = fleet.lower + frac * fleet.deadband
    return fleet, T, s


def sample_population(spec: PopulationSpec, seed) -> list[tuple[EwhParams, EwhState]]:
    fleet, T, s = sample_fleet(spec, seed)
    out = []
    for i in range(spec.n):
        params = EwhParams(**{name: float(getattr(fleet, name)[i]) for name in PARAM_FIELDS})
        out.append((params, EwhState(float(T[i]), int(s[i]))))
    return out


# ---------------------------------------------------------------------------
# Draw profiles
# ---------------------------------------------------------------------------


class DrawProfileError(ValueError):
    pass


@dataclass(frozen=True)
class DrawProfile:
    """Daily hot-water flow series, held constant between samples and repeated every 24 h."""

    times: np.ndarray  # hr of day
    flows: np.ndarray  # lb/hr
    label: str = ""

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        flows = np.asarray(self.flows, dtype=float)
        if times.ndim != 1 or times.shape != flows.shape or times.size == 0:
            raise DrawProfileError("profile needs matching, non-empty time and flow vectors")
        if np.any(np.diff(times) <= 0):
            raise DrawProfileError("profile times must be strictly increasing")
        if np.any(flows < 0):
            raise DrawProfileError("profile flows must be non-negative")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "flows", flows)

    @classmethod
    def zero(cls) -> "DrawProfile":
        return cls(np.array([0.0]), np.array([0.0]), "zero")

    @property
    def is_zero(self) -> bool:
        return not np.any(self.flows > 0)

    @property
    def zero_fraction(self) -> float:
        return float(np.mean(self.flows == 0))

    def flow_at(self, t_hr: float) -> float:
        """Flow rate at absolute time ``t_hr``; before the first sample of a day the previous day's last sample holds."""
        tod = t_hr % 24.0
        k = np.searchsorted(self.times, tod, side="right") - 1
        return float(self.flows[k])  # k == -1 wraps to the last sample

    def change_points_min(self, start_min: float, stop_min: float) -> np.ndarray:
        """Absolute minutes in (start, stop) at which the held flow may change."""
        if self.is_zero:
            return np.empty(0)
        day0 = math.floor(start_min / 1440.0)
        day1 = math.floor(stop_min / 1440.0)
        pts = np.concatenate([self.times * 60.0 + 1440.0 * d for d in range(day0, day1 + 1)])
        return pts[(pts > start_min) & (pts < stop_min)]


def load_draw_profile(source: IO | bytes | str, label: str = "") -> DrawProfile:
    """Parse a ``time_hr,flow_lb_per_hr`` CSV from a byte/text stream or raw bytes."""
    data = source if isinstance(source, (bytes, str)) else source.read()
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DrawProfileError("row 1: empty profile file") from None
    if tuple(h.strip() for h in header) != PROFILE_HEADER:
        raise DrawProfileError(f"row 1: expected header {','.join(PROFILE_HEADER)!r}, got {','.join(header)!r}")
    times: list[float] = []
    flows: list[float] = []
    for row_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise DrawProfileError(f"row {row_no}: expected 2 columns, got {len(row)}")
        try:
            t, f = float(row[0]), float(row[1])
        except ValueError:
            raise DrawProfileError(f"row {row_no}: non-numeric value in {row!r}") from None
        if not (math.isfinite(t) and math.isfinite(f)):
            raise DrawProfileError(f"row {row_no}: non-finite value in {row!r}")
        if times and t <= times[-1]:
            raise DrawProfileError(f"row {row_no}: time {t} does not increase (previous {times[-1]})")
        if f < 0:
            raise DrawProfileError(f"row {row_no}: negative flow {f}")
        times.append(t)
        flows.append(f)
    if not times:
        raise DrawProfileError("profile has no data rows")
    return DrawProfile(np.array(times), np.array(flows), label)


# ---------------------------------------------------------------------------
# Ensemble simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ControlWindow:
    t0: float  # min
    tf: float  # min

    def __post_init__(self):
        if not self.tf > self.t0:
            raise ValueError(f"window end {self.tf} must be after its start {self.t0}")

    @property
    def length(self) -> float:
        return self.tf - self.t0

    def grid(self, output_dt: float) -> np.ndarray:
        """Output times in minutes from ``t0``; includes ``tf`` when it falls on the grid."""
        if not output_dt > 0:
            raise ValueError(f"output_dt must be positive, got {output_dt}")
        n = int(math.floor(self.length / output_dt + 1e-9))
        return np.arange(n + 1) * output_dt


@dataclass
class EnsembleTrajectory:
    time_grid: np.ndarray  # min from t0, shape (K,)
    power: np.ndarray  # kW, shape (R, K)
    fraction_on: np.ndarray  # shape (R, K)
    seed: int | None = None
    spec_digest: str | None = None
    t0: float = 0.0
    # per-device switch states on the grid, (R, K, N); only when requested
    states: np.ndarray | None = None
    device_power: np.ndarray | None = None  # (R, N)

    @property
    def replications(self) -> int:
        return self.power.shape[0]


def _profile_assignment(profiles, n_total: int, n_per_rep: int):
    """Unique profiles plus a per-device index into them (round-robin within a replication)."""
    if profiles is None:
        return [DrawProfile.zero()], np.zeros(n_total, dtype=np.intp)
    if isinstance(profiles, DrawProfile):
        return [profiles], np.zeros(n_total, dtype=np.intp)
    profiles = list(profiles)
    if not profiles:
        raise ValueError("empty profile list")
    idx = np.arange(n_total) % n_per_rep % len(profiles)
    return profiles, idx


def _run_fleet(
    fleet: FleetParams,
    T: np.ndarray,
    s: np.ndarray,
    profiles,
    window: ControlWindow,
    output_dt: float,
    reps: int,
    record_states: bool = False,
):
    n_total = len(fleet)
    n = n_total // reps
    uniq, pidx = _profile_assignment(profiles, n_total, n)
    grid = window.grid(output_dt)
    stops = window.t0 + grid
    change = [p.change_points_min(window.t0, stops[-1]) for p in uniq]
    K = grid.size
    power = np.empty((reps, K))
    frac = np.empty((reps, K))
    states = np.empty((reps, K, n), dtype=np.int8) if record_states else None
    P = fleet.P.reshape(reps, n)

    def record(k):
        sr = s.reshape(reps, n)
        power[:, k] = (sr * P).sum(axis=1)
        frac[:, k] = sr.sum(axis=1) / n
        if record_states:
            states[:, k, :] = sr

    record(0)
    all_zero = all(p.is_zero for p in uniq)
    for k in range(1, K):
        a, b = stops[k - 1], stops[k]
        if all_zero:
            T, s = step_fleet(T, s, fleet, 0.0, (b - a) / 60.0)
        else:
            cuts = np.unique(np.concatenate([[a, b], *[c[(c > a) & (c < b)] for c in change]]))
            for lo, hi in zip(cuts[:-1], cuts[1:]):
                # sample at the midpoint so round-off in change points cannot pick the wrong side
                flows = np.array([p.flow_at((lo + hi) / 120.0) for p in uniq])
                T, s = step_fleet(T, s, fleet, flows[pidx], (hi - lo) / 60.0)
        record(k)
    return grid, power, frac, states, P


def simulate_ensemble(
    devices: Sequence[tuple[EwhParams, EwhState]],
    profiles=None,
    window: ControlWindow = ControlWindow(0.0, 15.0),
    output_dt: float = 0.1,
    record_states: bool = False,
) -> EnsembleTrajectory:
    """Simulate one ensemble over ``window`` and record P_sigma and fraction-on.

    ``profiles`` is None (zero draw), one DrawProfile for every device, or a
    sequence assigned to devices round-robin.
    """
    if not devices:
        raise ValueError("no devices to simulate")
    fleet = FleetParams.from_params([d[0] for d in devices])
    T = np.array([d[1].T_w for d in devices], dtype=float)
    s = np.array([d[1].s for d in devices], dtype=np.int8)
    grid, power, frac, states, P = _run_fleet(fleet, T, s, profiles, window, output_dt, 1, record_states)
    return EnsembleTrajectory(grid, power, frac, t0=window.t0, states=states, device_power=P)


def monte_carlo(
    spec: PopulationSpec,
    profiles=None,
    window: ControlWindow = ControlWindow(0.0, 15.0),
    replications: int = 200,
    master_seed: int = 0,
    output_dt: float = 0.1,
    record_states: bool = False,
) -> EnsembleTrajectory:
    """Independent replications, each with a freshly sampled population."""
    if replications < 1:
        raise ValueError(f"replications must be at least 1, got {replications}")
    fleets, Ts, ss = [], [], []
    for r in range(replications):
        fleet, T, s = sample_fleet(spec, replication_seed(master_seed, r))
        fleets.append(fleet)
        Ts.append(T)
        ss.append(s)
    fleet = FleetParams.concat(fleets)
    grid, power, frac, states, P = _run_fleet(
        fleet, np.concatenate(Ts), np.concatenate(ss), profiles, window, output_dt, replications, record_states
    )
    return EnsembleTrajectory(
        grid, power, frac, seed=master_seed, spec_digest=spec.digest(), t0=window.t0,
        states=states, device_power=P,
    )


@dataclass(frozen=True)
class OnFractionCurve:
    t: np.ndarray  # min from t0
    p_on: np.ndarray
    stderr: np.ndarray

    @property
    def p0(self) -> float:
        return float(self.p_on[0])


def mean_fraction_on(traj: EnsembleTrajectory) -> OnFractionCurve:
    f = traj.fraction_on
    if f.shape[0] < 1:
        raise ValueError("trajectory has no replications")
    mean = f.mean(axis=0)
    if f.shape[0] > 1:
        se = f.std(axis=0, ddof=1) / math.sqrt(f.shape[0])
    else:
        se = np.zeros_like(mean)
    return OnFractionCurve(traj.time_grid.copy(), mean, se)


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------


def write_trajectory_csv(traj: EnsembleTrajectory, out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRAJECTORY_HEADER)
    for r in range(traj.replications):
        for k, t in enumerate(traj.time_grid):
            w.writerow((r, repr(float(t)), repr(float(traj.power[r, k])), repr(float(traj.fraction_on[r, k]))))


def read_trajectory_csv(source: IO[str]) -> EnsembleTrajectory:
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None or tuple(header) != TRAJECTORY_HEADER:
        raise ValueError(f"expected header {','.join(TRAJECTORY_HEADER)!r}")
    rows: dict[int, list[tuple[float, float, float]]] = {}
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            r, t, p, f = int(row[0]), float(row[1]), float(row[2]), float(row[3])
        except (ValueError, IndexError):
            raise ValueError(f"row {row_no}: malformed trajectory row {row!r}") from None
        rows.setdefault(r, []).append((t, p, f))
    if not rows:
        raise ValueError("trajectory file has no data rows")
    reps = sorted(rows)
    grid = np.array([x[0] for x in rows[reps[0]]])
    for r in reps:
        if len(rows[r]) != grid.size or any(x[0] != g for x, g in zip(rows[r], grid)):
            raise ValueError(f"replication {r} has a different time grid")
    power = np.array([[x[1] for x in rows[r]] for r in reps])
    frac = np.array([[x[2] for x in rows[r]] for r in reps])
    return EnsembleTrajectory(grid, power, frac)
