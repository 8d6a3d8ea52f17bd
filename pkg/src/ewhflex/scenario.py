"""Scenario files: YAML documents describing one experiment.

Schema version 1 (every key except ``schema_version`` and ``population.n`` is
optional)::

    schema_version: 1
    name: fig3a
    command: simulate            # default command when replayed as an example
    population:
      n: 10
      init_on_fraction: 1.0
      parameter_ranges: {P: [4.0, 5.0]}   # overrides of the nominal ranges
      init_temperature: [0.0, 1.0]        # sub-band of the deadband
    window: {t0_min: 0.0, tf_min: 15.0}
    output_dt_min: 0.1
    draw: zero                   # or a profile CSV path, or a list of paths
    replications: 200
    seed: 1
    band: {omega_u_hz: 59.98, omega_l_hz: 59.90, omega_0_hz: 60.0}
    event: {t_min: 0.0, omega_hz: 59.94}  # or event_file: path
    commitment: optimal          # kW number, "75%" of initial power, or "snapshot"
    alphas: {alpha_on: 0.019, alpha_off: 0.009}
    moments: analytic            # or empirical
    sweep_levels: ["100%", "75%", optimal]
    estimate_fractions: [1.0, 0.65, 0.3]

Relative paths resolve against the scenario file's directory.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .droop import DroopBand, FrequencyEvent, load_event
from .population import ControlWindow, DrawProfile, PopulationSpec, load_draw_profile

SCHEMA_VERSION = 1

_KNOWN_KEYS = {
    "schema_version", "name", "command", "description", "population", "window", "output_dt_min", "draw",
    "replications", "seed", "band", "event", "event_file", "commitment", "alphas", "moments",
    "sweep_levels", "estimate_fractions",
}


class ScenarioError(ValueError):
    """Invalid scenario content (exit status 2)."""


@dataclass
class Scenario:
    name: str
    population: PopulationSpec
    window: ControlWindow
    output_dt: float = 0.1
    profiles: list[DrawProfile] | None = None  # None means zero draw
    replications: int = 200
    seed: int = 0
    band: DroopBand | None = None
    event: FrequencyEvent | None = None
    commitment: Any = "optimal"
    alphas: tuple[float, float] | None = None
    moments: str = "analytic"
    sweep_levels: list = field(default_factory=lambda: ["100%", "75%", "optimal"])
    estimate_fractions: list[float] = field(default_factory=lambda: [1.0, 0.65, 0.3])
    command: str | None = None
    source: Path | None = None


def builtin_names() -> list[str]:
    root = importlib.resources.files("ewhflex") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def builtin_path(name: str) -> Path:
    return Path(str(importlib.resources.files("ewhflex") / "scenarios" / f"{name}.yaml"))


def resolve(ref: str) -> Path:
    """A scenario path, or the name of a packaged example scenario."""
    p = Path(ref)
    if p.exists():
        return p
    if ref in builtin_names():
        return builtin_path(ref)
    raise FileNotFoundError(f"scenario not found: {ref}")


def _num(d: dict, key: str, default=None, kind=float):
    if key not in d:
        if default is None:
            raise ScenarioError(f"missing required key {key!r}")
        return default
    try:
        return kind(d[key])
    except (TypeError, ValueError):
        raise ScenarioError(f"{key!r} must be a number, got {d[key]!r}") from None


def parse_commitment(value) -> Any:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if value <= 0:
            raise ScenarioError("commitment must be positive")
        return float(value)
    if isinstance(value, str):
        v = value.strip()
        if v in ("optimal", "snapshot"):
            return v
        if v.endswith("%"):
            try:
                frac = float(v[:-1]) / 100.0
            except ValueError:
                raise ScenarioError(f"bad commitment level {value!r}") from None
            if frac <= 0:
                raise ScenarioError("commitment must be positive")
            return v
    raise ScenarioError(f"commitment must be a kW number, 'NN%', 'optimal' or 'snapshot'; got {value!r}")


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ScenarioError(f"{path}: not valid YAML ({exc})") from None
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: scenario must be a mapping")
    return scenario_from_dict(doc, base=path.parent, source=path)


def scenario_from_dict(doc: dict, base: Path = Path("."), source: Path | None = None) -> Scenario:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {doc.get('schema_version')!r}; expected {SCHEMA_VERSION}")
    unknown = set(doc) - _KNOWN_KEYS
    if unknown:
        raise ScenarioError(f"unknown scenario key(s): {sorted(unknown)}")
    pop = doc.get("population")
    if not isinstance(pop, dict):
        raise ScenarioError("missing 'population' mapping")
    try:
        spec = PopulationSpec(
            n=_num(pop, "n", kind=int),
            init_on_fraction=_num(pop, "init_on_fraction", 1.0),
            parameter_ranges={k: tuple(v) for k, v in (pop.get("parameter_ranges") or {}).items()},
            init_temperature=tuple(pop.get("init_temperature", (0.0, 1.0))),
        )
        win = doc.get("window", {}) or {}
        window = ControlWindow(_num(win, "t0_min", 0.0), _num(win, "tf_min", 15.0))
        band = None
        if doc.get("band") is not None:
            b = doc["band"]
            band = DroopBand(_num(b, "omega_u_hz"), _num(b, "omega_l_hz"), _num(b, "omega_0_hz", 60.0))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc)) from None

    profiles = _load_profiles(doc.get("draw", "zero"), base)

    event = None
    if "event" in doc and "event_file" in doc:
        raise ScenarioError("give either 'event' or 'event_file', not both")
    if doc.get("event") is not None:
        ev = doc["event"]
        if isinstance(ev, list):
            raise ScenarioError(f"at most one frequency event per control window; got {len(ev)}")
        event = FrequencyEvent(_num(ev, "t_min"), _num(ev, "omega_hz"))
    elif doc.get("event_file") is not None:
        p = base / doc["event_file"]
        with open(p, encoding="utf-8") as fh:
            try:
                event = load_event(fh)
            except ValueError as exc:
                raise ScenarioError(f"{p}: {exc}") from None

    alphas = None
    if doc.get("alphas") is not None:
        a = doc["alphas"]
        alphas = (_num(a, "alpha_on"), _num(a, "alpha_off"))
        if min(alphas) < 0:
            raise ScenarioError("alphas must be non-negative")

    moments = doc.get("moments", "analytic")
    if moments not in ("analytic", "empirical"):
        raise ScenarioError(f"moments must be 'analytic' or 'empirical', got {moments!r}")
    reps = _num(doc, "replications", 200, int)
    if reps < 1:
        raise ScenarioError("replications must be at least 1")
    fractions = [float(x) for x in doc.get("estimate_fractions", [1.0, 0.65, 0.3])]
    if any(not 0 <= f <= 1 for f in fractions):
        raise ScenarioError("estimate_fractions must lie in [0, 1]")
    levels = [parse_commitment(x) for x in doc.get("sweep_levels", ["100%", "75%", "optimal"])]
    if not levels:
        raise ScenarioError("sweep_levels must not be empty")
    dt = _num(doc, "output_dt_min", 0.1)
    if dt <= 0:
        raise ScenarioError("output_dt_min must be positive")
    return Scenario(
        name=str(doc.get("name", source.stem if source else "scenario")),
        population=spec,
        window=window,
        output_dt=dt,
        profiles=profiles,
        replications=reps,
        seed=_num(doc, "seed", 0, int),
        band=band,
        event=event,
        commitment=parse_commitment(doc.get("commitment", "optimal")),
        alphas=alphas,
        moments=moments,
        sweep_levels=levels,
        estimate_fractions=fractions,
        command=doc.get("command"),
        source=source,
    )


def _load_profiles(draw, base: Path) -> list[DrawProfile] | None:
    if draw is None or draw == "zero":
        return None
    refs = draw if isinstance(draw, list) else [draw]
    out = []
    for ref in refs:
        p = base / str(ref)
        with open(p, "rb") as fh:
            try:
                out.append(load_draw_profile(fh, label=p.stem))
            except ValueError as exc:
                raise ScenarioError(f"{p}: {exc}") from None
    return out
