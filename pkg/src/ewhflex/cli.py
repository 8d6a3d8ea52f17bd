"""Command-line front end.

    ewhflex simulate        --scenario fig3a --out results/
    ewhflex estimate-alphas --scenario fig6
    ewhflex assess          --scenario fig5a [--alpha-on 0.019 --alpha-off 0.009]
    ewhflex sweep           --scenario fig5a
    ewhflex event           --scenario event_mid
    ewhflex list

``--scenario`` accepts a YAML path or the name of a packaged example.
Exit status: 0 on success, 2 on invalid input, 3 on file errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import sys
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from . import analytics as an
from .droop import assign_thresholds, respond_to_frequency, target_droop_power
from .population import (
    EnsembleTrajectory,
    OnFractionCurve,
    PopulationSpec,
    mean_fraction_on,
    monte_carlo,
    replication_seed,
    sample_fleet,
    write_trajectory_csv,
)
from .scenario import Scenario, ScenarioError, builtin_names, load_scenario, resolve

log = logging.getLogger("ewhflex")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 2, 3

CURVES_HEADER = ("p0", "t_min", "p_on", "stderr")
SWEEP_HEADER = ("level", "commitment_kW", "t_min", "analytic_err", "empirical_err", "empirical_stderr")
EVENT_OUT_HEADER = (
    "replication", "t_event_min", "omega_hz", "P_sigma_t0_kW", "P_sigma_pre_kW", "P_sigma_post_kW",
    "committed_kW", "target_kW", "gap_kW", "max_device_kW",
)


def _f(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def run_ensemble(sc: Scenario, spec: PopulationSpec | None = None, seed: int | None = None, **kw) -> EnsembleTrajectory:
    return monte_carlo(
        spec or sc.population,
        sc.profiles,
        sc.window,
        replications=sc.replications,
        master_seed=sc.seed if seed is None else seed,
        output_dt=sc.output_dt,
        **kw,
    )


def scenario_moments(sc: Scenario) -> an.PowerMoments:
    spec = sc.population
    if sc.moments == "empirical":
        fleet, _, _ = sample_fleet(spec, replication_seed(sc.seed, 0))
        return an.PowerMoments.from_samples(fleet.P, spec.n)
    lo, hi = spec.parameter_ranges["P"]
    return an.PowerMoments.from_uniform(lo, hi, spec.n)


def scenario_model(sc: Scenario, alphas: tuple[float, float] | None = None) -> an.OnProbabilityModel:
    alphas = alphas or sc.alphas
    if alphas is None:
        raise ScenarioError("no alphas: set 'alphas' in the scenario or pass --alpha-on/--alpha-off")
    return an.OnProbabilityModel(sc.population.realized_on_fraction, alphas[0], alphas[1], sc.window)


def resolve_commitment(level, sc: Scenario, m: an.PowerMoments, model: an.OnProbabilityModel) -> float:
    """kW value of a commitment level; percentages are of the expected initial power."""
    initial = sc.population.n_on * m.mean_p
    if isinstance(level, float):
        return level
    if level == "optimal":
        return an.optimal_flexibility(m, model).optimal_commitment
    if level == "snapshot":
        return initial
    return float(level[:-1]) / 100.0 * initial


def _level_label(level) -> str:
    return f"{level!r}kW" if isinstance(level, float) else str(level)


def _open_out(out_dir: Path, name: str) -> IO[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    return open(out_dir / name, "w", newline="", encoding="utf-8")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(sc: Scenario, out_dir: Path) -> Path:
    traj = run_ensemble(sc)
    path = out_dir / "trajectory.csv"
    with _open_out(out_dir, path.name) as fh:
        write_trajectory_csv(traj, fh)
    p = traj.power
    print(
        f"{sc.name}: N={sc.population.n} reps={traj.replications} "
        f"mean P_sigma t0={p[:, 0].mean():.3f} kW  tf={p[:, -1].mean():.3f} kW -> {path}"
    )
    return path


def write_curves_csv(curves: Sequence[OnFractionCurve], out: IO[str]) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CURVES_HEADER)
    for c in curves:
        for t, p, se in zip(c.t, c.p_on, c.stderr):
            w.writerow((_f(c.p0), _f(t), _f(p), _f(se)))


def read_curves_csv(source: IO[str]) -> list[OnFractionCurve]:
    reader = csv.reader(source)
    header = tuple(next(reader, ()))
    if header not in (CURVES_HEADER, CURVES_HEADER[:3]):
        raise ValueError(f"expected header {','.join(CURVES_HEADER)!r}")
    groups: dict[float, list[tuple[float, float, float]]] = {}
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            p0, t, p = float(row[0]), float(row[1]), float(row[2])
            se = float(row[3]) if len(row) > 3 else 0.0
        except (ValueError, IndexError):
            raise ValueError(f"row {row_no}: malformed curve row {row!r}") from None
        groups.setdefault(p0, []).append((t, p, se))
    curves = []
    for p0, pts in groups.items():
        arr = np.array(pts)
        curves.append(OnFractionCurve(arr[:, 0], arr[:, 1], arr[:, 2]))
    return curves


def simulate_curves(sc: Scenario) -> list[OnFractionCurve]:
    """Mean on-fraction curve per initial fraction; curve j uses master seed ``seed + j``."""
    curves = []
    for j, frac in enumerate(sc.estimate_fractions):
        spec = dataclasses.replace(sc.population, init_on_fraction=frac)
        curves.append(mean_fraction_on(run_ensemble(sc, spec=spec, seed=sc.seed + j)))
    return curves


def alpha_rows(est: an.AlphaEstimate) -> list[tuple[str, float]]:
    nan = float("nan")
    rows = [
        ("alpha_on", est.alpha_on if est.alpha_on is not None else nan),
        ("alpha_off", est.alpha_off if est.alpha_off is not None else nan),
    ]
    for j, f in enumerate(est.fits):
        rows += [
            (f"curve{j}_p0", f.p0),
            (f"curve{j}_slope", f.slope),
            (f"curve{j}_intercept", f.intercept),
            (f"curve{j}_r2", f.r2),
        ]
    return rows


def cmd_estimate_alphas(sc: Scenario | None, out_dir: Path, curves: list[OnFractionCurve] | None = None) -> an.AlphaEstimate:
    if curves is None:
        if sc is None:
            raise ScenarioError("need a scenario or --curves input")
        distinct = set(sc.estimate_fractions)
        if len(distinct) < 2 and 1.0 not in distinct:
            raise ScenarioError("estimate_fractions needs p0=1 or at least two distinct values")
        curves = simulate_curves(sc)
        with _open_out(out_dir, "p_on_curves.csv") as fh:
            write_curves_csv(curves, fh)
    est = an.estimate_alphas(curves)
    with _open_out(out_dir, "alphas.csv") as fh:
        an.write_report_csv(alpha_rows(est), fh)
    on = "n/a" if est.alpha_on is None else f"{est.alpha_on:.5f}"
    off = "n/a" if est.alpha_off is None else f"{est.alpha_off:.5f}"
    print(f"alpha_on={on} /min  alpha_off={off} /min  R2={[round(f.r2, 4) for f in est.fits]}")
    for note in est.notes:
        print(f"note: {note}")
    return est


def cmd_assess(sc: Scenario, out_dir: Path, alphas: tuple[float, float] | None = None, grid_steps: int = 10_000):
    m = scenario_moments(sc)
    model = scenario_model(sc, alphas)
    a = an.optimal_flexibility(m, model)
    extra: list[tuple[str, float]] = [
        ("equalizer_is_minimax", int(a.equalizer_is_minimax)),
        ("p_on_clamped", int(a.clamped)),
        ("moments_empirical", int(m.source == "empirical")),
    ]
    if sc.commitment == "optimal":
        lo, hi = 0.5 * a.optimal_commitment, 1.5 * a.optimal_commitment
        oracle = an.grid_search_flexibility(m, model, lo, hi, grid_steps)
        extra += [
            ("oracle_p_star_kW", oracle),
            ("oracle_delta_kW", abs(oracle - a.optimal_commitment)),
            ("oracle_step_kW", (hi - lo) / (grid_steps - 1)),
        ]
    else:
        c = resolve_commitment(sc.commitment, sc, m, model)
        worst, where = an.sup_error(m, model, c)
        extra += [("commitment_kW", c), ("sup_err", worst), ("sup_err_at_tf", int(where == "tf"))]
    rows = an.assessment_rows(a, extra)
    with _open_out(out_dir, "assessment.csv") as fh:
        an.write_report_csv(rows, fh)
    print(f"{sc.name}: P* = {a.optimal_commitment:.4f} kW  err(t0)={a.error_at_start:.5f}  err(tf)={a.error_at_end:.5f}")
    return rows


def cmd_sweep(sc: Scenario, out_dir: Path, alphas: tuple[float, float] | None = None) -> Path:
    m = scenario_moments(sc)
    model = scenario_model(sc, alphas)
    traj = run_ensemble(sc)
    t = traj.time_grid
    path = out_dir / "sweep.csv"
    with _open_out(out_dir, path.name) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for level in sc.sweep_levels:
            c = resolve_commitment(level, sc, m, model)
            ana = an.analytic_error_curve(m, model, c, sc.window.t0 + t)
            _, emp, se = an.empirical_sq_error(traj, c)
            for k in range(t.size):
                w.writerow((_level_label(level), _f(c), _f(t[k]), _f(ana[k]), _f(emp[k]), _f(se[k])))
    print(f"{sc.name}: {len(sc.sweep_levels)} commitment levels -> {path}")
    return path


def event_rows(sc: Scenario) -> list[tuple]:
    if sc.band is None or sc.event is None:
        raise ScenarioError("event command needs 'band' and exactly one 'event'")
    ev = sc.event
    w = sc.window
    if not w.t0 <= ev.t_min <= w.tf:
        raise ScenarioError(f"event time {ev.t_min} lies outside the window [{w.t0}, {w.tf}]")
    optimal_kw = None
    if sc.commitment == "optimal":
        m = scenario_moments(sc)
        optimal_kw = an.optimal_flexibility(m, scenario_model(sc)).optimal_commitment
    traj = run_ensemble(sc, record_states=True)
    k = int(round((ev.t_min - w.t0) / sc.output_dt))
    if k >= traj.time_grid.size or abs(traj.time_grid[k] - (ev.t_min - w.t0)) > 1e-9:
        raise ScenarioError(f"event time {ev.t_min} is not on the {sc.output_dt}-min output grid")
    rows = []
    for r in range(traj.replications):
        s0 = traj.states[r, 0]
        sk = traj.states[r, k]
        P = traj.device_power[r]
        p_t0 = float(traj.power[r, 0])
        p_pre = float(traj.power[r, k])
        on0 = np.flatnonzero(s0)
        if on0.size == 0:
            shed = 0.0
            max_p = 0.0
        else:
            # thresholds are fixed at the window start; only still-on devices can respond
            assign = assign_thresholds([(int(i), float(P[i])) for i in on0], sc.band)
            responders = [i for i in respond_to_frequency(assign, ev.omega_hz) if sk[i] == 1]
            shed = float(P[responders].sum()) if responders else 0.0
            max_p = assign.max_power
        p_post = p_pre - shed
        if sc.commitment == "snapshot":
            committed = p_t0
        elif isinstance(sc.commitment, str) and sc.commitment.endswith("%"):
            committed = float(sc.commitment[:-1]) / 100.0 * p_t0
        elif sc.commitment == "optimal":
            committed = optimal_kw
        else:
            committed = sc.commitment
        # the droop line cannot promise more than is running at the event
        committed = min(committed, p_pre)
        target = target_droop_power(sc.band, ev.omega_hz, committed, p_pre)
        rows.append((r, ev.t_min, ev.omega_hz, p_t0, p_pre, p_post, committed, target, p_post - target, max_p))
    return rows


def cmd_event(sc: Scenario, out_dir: Path) -> Path:
    rows = event_rows(sc)
    path = out_dir / "event.csv"
    with _open_out(out_dir, path.name) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_OUT_HEADER)
        for row in rows:
            w.writerow((row[0],) + tuple(_f(x) for x in row[1:]))
    gaps = np.array([r[8] for r in rows])
    print(f"{sc.name}: max |gap| = {np.abs(gaps).max():.4f} kW over {len(rows)} replications -> {path}")
    return path


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate-alphas": cmd_estimate_alphas,
    "assess": cmd_assess,
    "sweep": cmd_sweep,
    "event": cmd_event,
}


def run_scenario_command(sc: Scenario, out_dir: Path, command: str | None = None):
    """Run ``command`` (default: the scenario's own) and return its result."""
    command = command or sc.command or "simulate"
    if command not in COMMANDS:
        raise ScenarioError(f"unknown command {command!r}")
    return COMMANDS[command](sc, out_dir)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ewhflex", description="Frequency-responsive EWH ensemble flexibility")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list packaged example scenarios")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--scenario", required=(name != "estimate-alphas"), help="YAML path or example name")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--replications", type=int, help="override the replication count")
        p.add_argument("--format", choices=["csv"], default="csv")
        if name in ("assess", "sweep"):
            p.add_argument("--alpha-on", type=float)
            p.add_argument("--alpha-off", type=float)
        if name == "estimate-alphas":
            p.add_argument("--curves", help="p_on curve CSV to fit instead of simulating ('-' for stdin)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    if args.command == "list":
        for name in builtin_names():
            print(name)
        return EXIT_OK
    try:
        sc = None
        if args.scenario is not None:
            sc = load_scenario(resolve(args.scenario))
            if args.seed is not None:
                sc.seed = args.seed
            if args.replications is not None:
                if args.replications < 1:
                    raise ScenarioError("--replications must be at least 1")
                sc.replications = args.replications
        if args.command == "estimate-alphas":
            curves = None
            if args.curves:
                if args.curves == "-":
                    curves = read_curves_csv(io.StringIO(sys.stdin.read()))
                else:
                    with open(args.curves, encoding="utf-8") as fh:
                        curves = read_curves_csv(fh)
            cmd_estimate_alphas(sc, args.out, curves)
        elif args.command in ("assess", "sweep"):
            alphas = None
            if (args.alpha_on is None) != (args.alpha_off is None):
                raise ScenarioError("give both --alpha-on and --alpha-off")
            if args.alpha_on is not None:
                alphas = (args.alpha_on, args.alpha_off)
            COMMANDS[args.command](sc, args.out, alphas)
        else:
            COMMANDS[args.command](sc, args.out)
    except OSError as exc:
        name = getattr(exc, "filename", None)
        log.error("file error%s: %s", f" ({name})" if name else "", exc.strerror or exc)
        return EXIT_IO
    except ValueError as exc:
        log.error("invalid input: %s", exc)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
