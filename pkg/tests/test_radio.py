import numpy as np
import pytest
from hypothesis import given, strategies as st

from vanetsim.kernel import Simulator
from vanetsim.radio import Medium, Packet, RadioParams, Scope, airtime, broadcast, in_range


@pytest.mark.parametrize("a,b,r,expect", [(0, 250, 250, True), (0, 250.1, 250, False), (7, 7, 0, True)])
def test_in_range(a, b, r, expect):
    assert in_range(a, b, r) is expect


@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4), st.floats(0, 1e3))
def test_in_range_symmetric(a, b, r):
    assert in_range(a, b, r) == in_range(b, a, r)


@pytest.mark.parametrize("size,expect", [(500, 0.004), (25, 0.0002), (1500, 0.012)])
def test_airtime(size, expect):
    assert airtime(size, 1e6) == pytest.approx(expect)


def test_broadcast_geometry():
    p = RadioParams()
    nodes = np.array([0, 1, 2, 3])
    pos = np.array([0.0, 100.0, 240.0, 300.0])
    got = broadcast(Packet(0, 1.0, 100, None), nodes, pos, p)
    assert [r for r, _ in got] == [1, 2]
    assert got[0][1] == pytest.approx(1.0 + 0.010 + 0.0008)


def test_broadcast_cr_scope():
    nodes = np.array([0, 1, 2])
    pos = np.array([0.0, 30.0, 100.0])
    got = broadcast(Packet(0, 0.0, 30, None, Scope.CR, 50.0), nodes, pos, RadioParams())
    assert [r for r, _ in got] == [1]


def _medium(positions, collisions=True):
    sim = Simulator()
    got = []
    nodes = np.arange(len(positions))
    pos = np.asarray(positions, dtype=float)
    m = Medium(sim, RadioParams(collisions=collisions), lambda t: (nodes, pos),
               lambda r, pk: got.append((r, pk.sender, sim.now)))
    return sim, m, got


def test_overlapping_transmissions_collide():
    # node 1 hears both senders and loses both; node 3 hears only sender 2
    sim, m, got = _medium([0.0, 200.0, 400.0, 600.0])
    sim.schedule(0.0, "tx", lambda ev: m.transmit(Packet(0, 0.0, 500, None)))
    sim.schedule(0.001, "tx", lambda ev: m.transmit(Packet(2, 0.001, 500, None)))
    sim.run_until(1.0)
    assert (1, 0) not in [(r, s) for r, s, _ in got]
    assert (1, 2) not in [(r, s) for r, s, _ in got]
    assert m.collided == 2
    assert sorted((r, s) for r, s, _ in got) == [(3, 2)]


def _overlap_oracle(txs, positions, R, size, bw, tx_delay):
    """Receptions that survive: enumerate intervals per receiver."""
    ivals = {}
    for k, (s, t0) in enumerate(txs):
        end = t0 + tx_delay + size * 8 / bw
        start = end - size * 8 / bw
        for r, p in enumerate(positions):
            if r != s and abs(p - positions[s]) <= R:
                ivals.setdefault(r, []).append((start, end, k, s))
    ok = set()
    for r, lst in ivals.items():
        for a in lst:
            if not any(b[2] != a[2] and b[0] < a[1] and a[0] < b[1] for b in lst):
                ok.add((r, a[3], a[2]))
    return ok


@given(st.lists(st.floats(0, 1000), min_size=2, max_size=6),
       st.lists(st.tuples(st.integers(0, 5), st.floats(0, 0.02)), min_size=1, max_size=6))
def test_collision_matches_interval_oracle(positions, txs):
    txs = [(s % len(positions), t) for s, t in sorted(txs, key=lambda x: x[1])]
    sim = Simulator()
    got = []
    nodes = np.arange(len(positions))
    pos = np.asarray(positions, dtype=float)
    m = Medium(sim, RadioParams(), lambda t: (nodes, pos),
               lambda r, pk: got.append((r, pk.sender, pk.payload)))
    for k, (s, t) in enumerate(txs):
        sim.schedule(t, "tx", lambda ev, s=s, t=t, k=k: m.transmit(Packet(s, t, 500, k)))
    sim.run_until(1.0)
    assert set(got) == _overlap_oracle(txs, positions, 250.0, 500, 1e6, 0.010)


def test_no_collisions_delivers_range_set():
    sim, m, got = _medium([0.0, 200.0, 400.0], collisions=False)
    sim.schedule(0.0, "tx", lambda ev: m.transmit(Packet(0, 0.0, 500, None)))
    sim.schedule(0.0, "tx", lambda ev: m.transmit(Packet(2, 0.0, 500, None)))
    sim.run_until(1.0)
    assert sorted((r, s) for r, s, _ in got) == [(1, 0), (1, 2)]


@given(st.lists(st.tuples(st.floats(0, 100), st.integers(26, 1500)), max_size=30), st.floats(1, 60))
def test_channel_accounting_conservation(sends, window):
    sim, m, _ = _medium([0.0, 100.0])
    for t, size in sorted(sends):
        sim.schedule(t, "tx", lambda ev, t=t, size=size: m.transmit(Packet(0, t, size, None)))
    sim.run_until(200)
    expect = sum(size * 8 for t, size in sends if 0 <= t < window)
    assert m.bits_between(0, window) == expect


def test_params_validate():
    with pytest.raises(ValueError):
        RadioParams(R=0).validate()
