import numpy as np
import pytest
from hypothesis import given, strategies as st

from vanetsim.dissemination import DataUnit
from vanetsim.metrics import (RunMetrics, aggregate, channel_usage_per_km, delivery_ratio,
                              dissemination_speed, eligible_pairs, partitions, protocol_speed,
                              write_rows)
from vanetsim.network import DeliveryEvent
from vanetsim.radio import ChannelRecord
from vanetsim.topology import components

from helpers import bfs_components, full_view, history_from, static_history


def test_channel_usage_example():
    log = [ChannelRecord(i * 0.1, 0.0, 500 * 8) for i in range(100)]
    assert channel_usage_per_km(log, 10.0, 10.0) == pytest.approx(4.0)


def test_channel_usage_empty():
    assert channel_usage_per_km([], 10.0, 10.0) == 0


def test_channel_usage_window_positive():
    with pytest.raises(ValueError):
        channel_usage_per_km([], 0.0, 1.0)


def test_speed_one_km_two_seconds():
    assert dissemination_speed([DeliveryEvent(1, 4, 1000.0, 2.0)], 0.0, 0.0) == pytest.approx(1800)


def test_speed_instant_delivery_excluded():
    ds = [DeliveryEvent(1, 0, 0.0, 0.0), DeliveryEvent(1, 4, 1000.0, 2.0)]
    assert dissemination_speed(ds, 0.0, 0.0) == pytest.approx(1800)
    assert dissemination_speed(ds[:1], 0.0, 0.0) is None


def test_protocol_speed_mean_of_unit_means():
    u1 = DataUnit(0, 0.0, 0.0)
    u2 = DataUnit(1, 0.0, 10.0)
    ds = [DeliveryEvent(u1.id, 1, 1000.0, 2.0), DeliveryEvent(u1.id, 2, 1000.0, 1.0),
          DeliveryEvent(u2.id, 3, 500.0, 11.0)]
    assert protocol_speed([u1, u2], ds) == pytest.approx(((1800 + 3600) / 2 + 1800) / 2)


def test_delivery_ratio_examples():
    el = {(1, 7), (2, 7)}
    assert delivery_ratio(el, el) == 1.0
    assert delivery_ratio({(1, 7), (9, 9)}, el) == 0.5
    assert delivery_ratio(set(), set()) is None


@pytest.mark.parametrize("pos,expect", [([0, 200, 600], [[0, 1], [2]]), ([], []),
                                        ([0, 200, 400, 600], [[0, 1, 2, 3]])])
def test_partitions(pos, expect):
    assert partitions(list(range(len(pos))), pos, 250) == expect


@given(st.lists(st.floats(0, 3000), max_size=25))
def test_components_match_bfs(pos):
    got = components(np.arange(len(pos)), np.asarray(pos, dtype=float), 250.0)
    ref = bfs_components(dict(enumerate(pos)), 250.0)
    assert sorted(map(sorted, got)) == sorted(map(sorted, ref))


def test_eligibility_any_instant_of_lifetime():
    # node 1 drives into the 5 km span at t=3; node 2 never does
    rows = [[0.0, 8000.0 - 1000.0 * k, 9000.0] for k in range(10)]
    view = full_view(history_from(rows, [1, -1, 1], road_length=10000.0))
    u = DataUnit(0, 0.0, 0.0, lifetime=5.0)
    assert eligible_pairs(view, [u]) == {(1, u.id)}
    short = DataUnit(0, 0.0, 0.0, lifetime=2.0)
    assert eligible_pairs(view, [short]) == set()


def test_aggregate_and_csv(tmp_path):
    runs = [RunMetrics("mile", 0.2, 2, s, 1.0 + s, None if s else 100.0, 0.5, 1, 2, 1, 3, 0)
            for s in range(2)]
    agg = aggregate(runs)
    assert len(agg) == 1
    assert agg[0].channel_kbit_s_km == 1.5 and agg[0].speed_kmh == 100.0
    write_rows(tmp_path / "r.csv", agg)
    text = (tmp_path / "r.csv").read_text()
    assert text.splitlines()[0] == ("protocol,penetration,concurrent_units,channel_kbit_s_km,"
                                    "speed_kmh,delivery_ratio")
    assert text.splitlines()[1] == "mile,0.200000,2,1.500000,100.000000,0.500000"


def test_channel_accounting_matches_radio():
    from vanetsim.network import ProtocolParams, UnitPlan, run_protocol
    from vanetsim.radio import RadioParams

    view = full_view(static_history([0.0, 100.0, 200.0], T=40))
    res = run_protocol(view, ProtocolParams(protocol="mile"), RadioParams(),
                       UnitPlan(lifetime=20.0, center=0.0), 3, 201.0)
    bits = sum(r.bits for r in res.channel_log)
    assert channel_usage_per_km(res.channel_log, res.duration, 0.201) == pytest.approx(
        bits / res.duration / 0.201 / 1000)
    assert len(res.channel_log) == res.packets
