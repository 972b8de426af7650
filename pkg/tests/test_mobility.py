import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vanetsim.kernel import rng_stream
from vanetsim.mobility import (V_100_KMH, V_105_KMH, History, MobilityParams, Perturbation, Road,
                               TraceFormatError, VehicleState, expected_neighborhood,
                               export_trace, import_trace, kmh_to_mps, relabel_laps,
                               sample_penetration, simulate, step)

EXPECTED_NEIGHBOURS = {5: 0.9, 10: 1.8, 20: 3.6, 30: 5.4, 40: 7.2, 50: 9, 60: 10.8, 70: 12.6, 80: 14.4,
         90: 16.2, 100: 18}


@pytest.mark.parametrize("pct", sorted(EXPECTED_NEIGHBOURS))
def test_neighbourhood_table(pct):
    assert expected_neighborhood(36, pct / 100, 250) == EXPECTED_NEIGHBOURS[pct]


def test_neighbourhood_zero_rate():
    assert expected_neighborhood(36, 0.0, 250) == 0


def test_speed_limits_exact():
    assert kmh_to_mps(105) == V_105_KMH and abs(V_105_KMH - 29.1666666667) < 1e-9
    assert kmh_to_mps(100) == V_100_KMH
    assert round(V_105_KMH * 3.6, 9) == 105


def _calm(**kw):
    base = dict(road_length=1000.0, lanes_per_direction=1, directions=1, v_max=29.0,
                accel=1.0, driver_imperfection=0.0, dt=1.0)
    base.update(kw)
    return MobilityParams(**base)


def test_free_acceleration():
    out = step([VehicleState(0, 1, 100.0, 0.0)], _calm(), np.random.default_rng(0))
    assert out[0].speed == 1.0 and out[0].position == 101.0


def test_follower_behind_stopped_leader_keeps_gap():
    p = _calm()
    world = [VehicleState(0, 1, 100.0, 20.0), VehicleState(1, 1, 110.0, 0.0)]
    out = step(world, p, np.random.default_rng(0))
    assert out[1].position - out[1].length - out[0].position >= -1e-9


def test_unsorted_input_rejected():
    with pytest.raises(ValueError):
        step([VehicleState(0, 1, 200.0, 0.0), VehicleState(1, 1, 100.0, 0.0)], _calm(),
             np.random.default_rng(0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(10, 60), st.floats(0, 1))
def test_gaps_and_speed_bounds_hold(seed, density, sigma):
    p = MobilityParams(road_length=2000.0, mean_density=density, driver_imperfection=sigma)
    rng = np.random.default_rng(seed)
    road = Road.populate(p, rng)
    for _ in range(30):
        road.step(rng)
        assert (road.v >= 0).all() and (road.v <= p.v_max + 1e-12).all()
        for lane in p.lanes():
            sel = road.lanes == lane
            x = np.sort(road.x[sel])
            if len(x) < 2:
                continue
            gaps = np.diff(np.append(x, x[0] + p.road_length)) - p.vehicle_length
            assert (gaps >= -1e-6).all()


def test_stationary_flow_without_noise():
    p = MobilityParams(road_length=5000.0, mean_density=8.0, driver_imperfection=0.0,
                       lanes_per_direction=1)
    rng = np.random.default_rng(1)
    road = Road.populate(p, rng, jitter=0.0)
    for _ in range(120):
        road.step(rng)
    assert np.allclose(road.v, p.v_max)
    for _ in range(60):
        road.step(rng)
        assert np.allclose(road.v, p.v_max)


def test_simulate_deterministic_and_shaped():
    p = MobilityParams(road_length=2000.0)
    a = simulate(p, 20, seed=5, warmup=10)
    b = simulate(p, 20, seed=5, warmup=10)
    assert a.equals(b)
    assert a.positions.shape == (21, len(a.ids))
    assert np.nanmin(a.positions) >= 0 and np.nanmax(a.positions) <= p.road_length
    assert not simulate(p, 20, seed=6, warmup=10).equals(a)


def test_perturbation_caps_speed():
    p = MobilityParams(road_length=2000.0, lanes_per_direction=1, directions=1)
    h = simulate(p, 30, seed=2, warmup=60, perturbations=(Perturbation(0, 5.0, 10.0, 0.0),))
    col = list(h.ids).index(0)
    assert (h.speeds[10:16, col] < 1.0).all()


def test_open_boundary_inflow_and_exit():
    p = MobilityParams(road_length=2000.0, boundary="open", directions=1, lanes_per_direction=1)
    h = simulate(p, 200, seed=3, warmup=0)
    # vehicles leave and new ones enter
    assert len(h.ids) > h.positions.shape[1] - 1
    assert np.isnan(h.positions).any()


def test_sample_penetration_extremes():
    cars = set(range(50))
    assert sample_penetration(cars, 1.0, random.Random(0)) == cars
    assert sample_penetration(cars, 0.0, random.Random(0)) == set()
    with pytest.raises(ValueError):
        sample_penetration(cars, 1.5, random.Random(0))


def test_sample_penetration_deterministic():
    a = sample_penetration(range(100), 0.4, rng_stream(9, "equip"))
    b = sample_penetration(range(100), 0.4, rng_stream(9, "equip"))
    assert a == b


def test_mean_neighbourhood_matches_table():
    """Simulated equipped one-hop neighbourhood at 30% on the full road."""
    p = MobilityParams()
    sizes = []
    for seed in range(12):
        h = simulate(p, 0, seed=seed, warmup=60)
        eq = sample_penetration(h.ids.tolist(), 0.3, rng_stream(seed, "equip"))
        mask = np.isin(h.ids, list(eq))
        pos = h.positions[0][mask]
        inner = pos[(pos > 250) & (pos < p.road_length - 250)]
        for x in inner:
            sizes.append(int(np.sum(np.abs(pos - x) <= 250)) - 1)
    assert abs(np.mean(sizes) - 5.4) <= 0.54


def _small_history():
    return History(1.0, np.array([0.0, 1.0, 2.0]), np.array([3, 7]), np.array([1, -2]),
                   np.array([[0.5, 900.0], [10.25, 880.125], [20.0, np.nan]]),
                   np.array([[10.0, 20.0], [9.75, 19.875], [9.0, np.nan]]))


def test_trace_round_trip(tmp_path):
    h = _small_history()
    export_trace(h, tmp_path / "t.csv")
    assert import_trace(tmp_path / "t.csv").equals(h)


def test_trace_round_trip_simulated(tmp_path):
    h = simulate(MobilityParams(road_length=1000.0), 5, seed=1, warmup=5)
    export_trace(h, tmp_path / "t.csv")
    assert import_trace(tmp_path / "t.csv").equals(h)


def test_empty_trace_round_trip(tmp_path):
    export_trace(History.empty(), tmp_path / "e.csv")
    assert len(import_trace(tmp_path / "e.csv")) == 0


def test_decreasing_time_names_line(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("# vanet-trace v1 dt=1.0\ntime,id,lane,position_m,speed_mps\n"
                 "1.0,0,1,5.0,1.0\n0.0,0,1,4.0,1.0\n")
    with pytest.raises(TraceFormatError) as exc:
        import_trace(f)
    assert exc.value.line_no == 4 and "line 4" in str(exc.value)


def test_malformed_line_names_line(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("# vanet-trace v1 dt=1.0\n0.0,0,1,abc,1.0\n")
    with pytest.raises(TraceFormatError, match="line 2"):
        import_trace(f)


def test_lap_relabel_gives_new_node():
    h = History(1.0, np.array([0.0, 1.0, 2.0]), np.array([0]), np.array([1]),
                np.array([[990.0], [5.0], [30.0]]), np.array([[15.0], [15.0], [25.0]]),
                road_length=1000.0)
    nodes, laps = relabel_laps(h)
    assert nodes[:, 0].tolist() == [0, 1, 1] and laps[:, 0].tolist() == [0, 1, 1]


def test_params_validation():
    with pytest.raises(ValueError):
        MobilityParams(driver_imperfection=1.5).validate()
    with pytest.raises(ValueError):
        MobilityParams(v_max=0).validate()
