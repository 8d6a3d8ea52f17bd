import io

import numpy as np
import pytest

from ewhflex.device import EwhParams, EwhState, step_device
from ewhflex.population import (
    ControlWindow,
    DrawProfile,
    DrawProfileError,
    PopulationSpec,
    load_draw_profile,
    mean_fraction_on,
    monte_carlo,
    on_count,
    read_trajectory_csv,
    replication_seed,
    sample_population,
    simulate_ensemble,
    write_trajectory_csv,
)

WINDOW = ControlWindow(0.0, 15.0)


def test_full_on_population():
    devices = sample_population(PopulationSpec(50, 1.0), 7)
    assert len(devices) == 50
    assert all(st.s == 1 for _, st in devices)


def test_exact_on_count():
    devices = sample_population(PopulationSpec(50, 0.3), 7)
    assert sum(st.s for _, st in devices) == 15


@pytest.mark.parametrize("n,frac,expected", [(50, 0.65, 33), (500, 0.66, 330), (10, 0.25, 3), (7, 0.0, 0), (3, 1.0, 3)])
def test_on_count_rounds_half_up(n, frac, expected):
    assert on_count(n, frac) == expected


def test_sampling_deterministic_and_in_range():
    spec = PopulationSpec(30, 0.5)
    a = sample_population(spec, 11)
    b = sample_population(spec, 11)
    assert a == b
    assert a != sample_population(spec, 12)
    for params, st in a:
        assert params.lower <= st.T_w <= params.upper
        assert 4.0 <= params.P <= 5.0
        assert 125.0 <= params.T_set <= 135.0
        assert params.C_w == 417.11


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n=0),
        dict(n=5, init_on_fraction=1.2),
        dict(n=5, parameter_ranges={"P": (5.0, 4.0)}),
        dict(n=5, parameter_ranges={"W": (0.0, 1.0)}),
        dict(n=5, parameter_ranges={"T_in": (60.0, 130.0)}),
        dict(n=5, parameter_ranges={"bogus": (1.0, 2.0)}),
        dict(n=5, init_temperature=(0.5, 1.5)),
    ],
)
def test_invalid_spec_rejected(kwargs):
    with pytest.raises(ValueError):
        PopulationSpec(**kwargs)


# --- draw profiles ---------------------------------------------------------


def test_zero_profile_file():
    prof = load_draw_profile(io.BytesIO(b"time_hr,flow_lb_per_hr\n0,0\n1,0\n2.5,0\n"))
    assert prof.is_zero
    assert np.all(prof.flows == 0)


def test_unsorted_profile_names_row():
    data = b"time_hr,flow_lb_per_hr\n0,0\n2,5\n1,3\n3,0\n"
    with pytest.raises(DrawProfileError, match="row 4"):
        load_draw_profile(io.BytesIO(data))


@pytest.mark.parametrize(
    "body,row",
    [("0,0\n1,-3\n", "row 3"), ("0,0\nx,1\n", "row 3"), ("0,0,1\n", "row 2"), ("0,0\n0,1\n", "row 3")],
)
def test_profile_errors_report_row(body, row):
    with pytest.raises(DrawProfileError, match=row):
        load_draw_profile(("time_hr,flow_lb_per_hr\n" + body).encode())


def test_profile_bad_header():
    with pytest.raises(DrawProfileError, match="row 1"):
        load_draw_profile(b"t,flow\n0,0\n")


def test_zero_fraction_statistic():
    # 946 zero samples out of 1000
    flows = np.zeros(1000)
    flows[:54] = 30.0
    body = "".join(f"{k * 0.024!r},{float(f)!r}\n" for k, f in enumerate(flows))
    prof = load_draw_profile(("time_hr,flow_lb_per_hr\n" + body).encode())
    assert prof.zero_fraction == pytest.approx(0.946, abs=1e-12)


def test_profile_zero_order_hold_wraps_daily():
    prof = DrawProfile(np.array([6.0, 7.0, 20.0]), np.array([100.0, 0.0, 50.0]))
    assert prof.flow_at(6.5) == 100.0
    assert prof.flow_at(7.0) == 0.0
    assert prof.flow_at(3.0) == 50.0  # held from 20:00 the previous day
    assert prof.flow_at(24 + 6.2) == 100.0
    np.testing.assert_allclose(prof.change_points_min(350.0, 430.0), [360.0, 420.0])


# --- ensemble simulation ---------------------------------------------------


def test_all_on_power_nonincreasing():
    traj = simulate_ensemble(sample_population(PopulationSpec(50, 1.0), 2), None, WINDOW)
    assert np.all(np.diff(traj.power[0]) <= 1e-12)
    assert traj.power[0, -1] < traj.power[0, 0]


def test_single_off_device_stays_off():
    devices = [(EwhParams(), EwhState(130.0, 0))]
    traj = simulate_ensemble(devices, None, WINDOW)
    assert np.all(traj.fraction_on == 0)
    assert np.all(traj.power == 0)


def test_degenerate_window_gives_snapshot():
    devices = sample_population(PopulationSpec(5, 0.6), 1)
    traj = simulate_ensemble(devices, None, ControlWindow(0.0, 0.05), output_dt=0.1)
    assert traj.time_grid.tolist() == [0.0]
    assert traj.fraction_on[0, 0] == pytest.approx(0.6)


def test_grid_includes_window_end():
    g = WINDOW.grid(0.1)
    assert g.size == 151 and g[-1] == pytest.approx(15.0)


def test_power_and_fraction_match_stored_states():
    traj = monte_carlo(PopulationSpec(8, 0.5), None, WINDOW, 4, 9, record_states=True)
    P = traj.device_power
    for r in range(4):
        np.testing.assert_allclose(traj.power[r], traj.states[r] @ P[r], rtol=0, atol=1e-12)
        np.testing.assert_allclose(traj.fraction_on[r], traj.states[r].mean(axis=1), rtol=0, atol=1e-15)
    assert np.all(traj.power <= P.sum(axis=1)[:, None] + 1e-12)
    assert np.all((traj.fraction_on >= 0) & (traj.fraction_on <= 1))


def test_ensemble_matches_scalar_stepping_with_draw():
    prof = DrawProfile(np.array([0.0, 0.05, 0.12, 0.2]), np.array([0.0, 900.0, 40.0, 0.0]))
    devices = sample_population(PopulationSpec(6, 0.5), 4)
    traj = simulate_ensemble(devices, prof, WINDOW, output_dt=0.5, record_states=True)
    # scalar replay honouring every profile change point
    cuts = sorted({0.0, 3.0, 7.2, 12.0, 15.0} | {k * 0.5 for k in range(31)})
    states = [st for _, st in devices]
    on_at = {0.0: [st.s for st in states]}
    for a, b in zip(cuts[:-1], cuts[1:]):
        flow = prof.flow_at((a + b) / 120)
        states = [step_device(st, p, flow, (b - a) / 60) for (p, _), st in zip(devices, states)]
        on_at[round(b, 9)] = [st.s for st in states]
    for k, t in enumerate(traj.time_grid):
        assert list(traj.states[0, k]) == on_at[round(float(t), 9)]


def test_initial_fraction_exact():
    traj = monte_carlo(PopulationSpec(50, 0.3), None, WINDOW, 5, 1)
    assert np.all(traj.fraction_on[:, 0] == 15 / 50)


def test_monte_carlo_deterministic():
    spec = PopulationSpec(20, 0.65)
    a = monte_carlo(spec, None, WINDOW, 6, 42)
    b = monte_carlo(spec, None, WINDOW, 6, 42)
    np.testing.assert_array_equal(a.power, b.power)
    np.testing.assert_array_equal(a.fraction_on, b.fraction_on)
    c = monte_carlo(spec, None, WINDOW, 6, 43)
    assert not np.array_equal(a.power, c.power)


def test_single_replication_equals_simulate_ensemble():
    spec = PopulationSpec(25, 0.7)
    mc = monte_carlo(spec, None, WINDOW, 1, 5)
    direct = simulate_ensemble(sample_population(spec, replication_seed(5, 0)), None, WINDOW)
    np.testing.assert_allclose(mc.power, direct.power, rtol=0, atol=1e-12)
    np.testing.assert_array_equal(mc.fraction_on, direct.fraction_on)


def test_replications_independent_of_count():
    spec = PopulationSpec(10, 1.0)
    few = monte_carlo(spec, None, WINDOW, 3, 8)
    many = monte_carlo(spec, None, WINDOW, 7, 8)
    np.testing.assert_allclose(many.power[:3], few.power, rtol=0, atol=1e-12)


def test_mean_fraction_on():
    traj = monte_carlo(PopulationSpec(50, 1.0), None, WINDOW, 30, 3)
    curve = mean_fraction_on(traj)
    np.testing.assert_allclose(curve.p_on, traj.fraction_on.mean(axis=0))
    assert curve.p0 == 1.0
    assert np.all(np.diff(curve.p_on) <= 1e-12)
    slope = np.polyfit(curve.t, curve.p_on, 1)[0]
    assert slope < 0


def test_mean_fraction_identical_replications():
    devices = sample_population(PopulationSpec(12, 0.5), 2)
    one = simulate_ensemble(devices, None, WINDOW)
    one.power = np.repeat(one.power, 3, axis=0)
    one.fraction_on = np.repeat(one.fraction_on, 3, axis=0)
    np.testing.assert_allclose(mean_fraction_on(one).p_on, one.fraction_on[0], rtol=0, atol=1e-15)


def test_trajectory_csv_round_trip():
    traj = monte_carlo(PopulationSpec(7, 0.4), None, ControlWindow(0, 2), 3, 1, output_dt=0.3)
    buf = io.StringIO()
    write_trajectory_csv(traj, buf)
    assert buf.getvalue().splitlines()[0] == "replication,t_min,P_sigma_kW,fraction_on"
    back = read_trajectory_csv(io.StringIO(buf.getvalue()))
    np.testing.assert_array_equal(back.time_grid, traj.time_grid)
    np.testing.assert_array_equal(back.power, traj.power)
    np.testing.assert_array_equal(back.fraction_on, traj.fraction_on)
