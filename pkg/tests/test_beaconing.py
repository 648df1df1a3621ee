import numpy as np
import pytest
from hypothesis import given, strategies as st

from pcbb.beaconing import (
    BeaconParams,
    NeighborStore,
    NeighborTable,
    beacon_schedule,
    draw_phases,
    emit_beacon,
    gbest_from_crnt,
    ingest_beacon,
    prune,
)
from pcbb.core import Beacon, Position
from pcbb.mobility import Vehicle
from pcbb.protocols import ForwardingState


def beacon(sid, x, t=0, lbest=None):
    return Beacon(sid, Position(x, 1), 20.0, 1, t, lbest)


def test_period_and_schedule():
    p = BeaconParams()
    assert p.period_us == 100_000 and p.ttl_us == 300_000
    for phase in (0, 1, 99_999):
        assert len(beacon_schedule(p.period_us, phase, 10_000_000)) == 100


def test_phases_differ_between_vehicles():
    ph = draw_phases(200, 100_000, np.random.default_rng(5))
    assert len(set(ph.tolist())) > 190
    assert ph.min() >= 0 and ph.max() < 100_000


@given(phase=st.integers(0, 99_999), start=st.integers(0, 9_000_000))
def test_schedule_density(phase, start):
    sched = np.array(beacon_schedule(100_000, phase, 10_000_000))
    window = np.count_nonzero((sched >= start) & (sched < start + 1_000_000))
    assert 9 <= window <= 11


def test_emit_beacon_piggyback():
    v = Vehicle(3, Position(120.0, 2), 25.0)
    b = emit_beacon(v, 500, lbest=ForwardingState().lbest)
    assert b.piggyback_lbest is None
    assert (b.sender_id, b.position, b.timestamp) == (3, Position(120.0, 2), 500)
    moved = emit_beacon(v, 600, Position(130.0, 2), 42.0)
    assert moved.position.x == 130.0 and moved.piggyback_lbest == 42.0


def test_ingest_upserts():
    nt = NeighborTable(0)
    ingest_beacon(nt, beacon(1, 100.0), 10)
    assert len(nt) == 1
    ingest_beacon(nt, beacon(1, 150.0), 20)
    assert len(nt) == 1 and nt.entries[1].position.x == 150.0 and nt.entries[1].last_seen == 20
    ingest_beacon(nt, beacon(0, 0.0), 30)
    assert 0 not in nt


def test_farthest_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(50):
        xs = rng.uniform(0, 1000, size=5)
        nt = NeighborTable(99)
        for i, x in enumerate(xs):
            ingest_beacon(nt, beacon(i, float(x)), 0)
        me = Position(500.0)
        assert nt.farthest(me).id == int(np.argmax(np.abs(xs - 500.0)))
    assert NeighborTable(0).farthest(Position(0.0)) is None


def test_prune_cases():
    nt = NeighborTable(0)
    for i, seen in enumerate([0, 100_000, 250_000, 400_000]):
        ingest_beacon(nt, beacon(i + 1, 10.0 * i), seen)
    assert set(prune(NeighborTable(0, dict(nt.entries)), 400_000).entries) == {2, 3, 4}
    assert len(prune(NeighborTable(0, dict(nt.entries)), 10_000_000)) == 0
    assert len(prune(NeighborTable(0, dict(nt.entries)), 400_000, ttl=10**9)) == 4
    with pytest.raises(ValueError):
        prune(nt, 0, ttl=0)


@given(st.lists(st.tuples(st.integers(1, 30), st.integers(0, 1_000_000)), max_size=25), st.integers(0, 1_500_000))
def test_prune_removes_exactly_stale(updates, now):
    nt = NeighborTable(0)
    last = {}
    for sid, t in updates:
        ingest_beacon(nt, beacon(sid, 1.0), t)
        last[sid] = t
    prune(nt, now, 300_000)
    assert set(nt.entries) == {s for s, t in last.items() if now - t <= 300_000}
    assert 0 not in nt


def test_gbest():
    nt = NeighborTable(0)
    assert gbest_from_crnt(nt) is None
    ingest_beacon(nt, beacon(1, 1.0, lbest=86.0), 0)
    assert gbest_from_crnt(nt) == 86.0
    ingest_beacon(nt, beacon(2, 2.0, lbest=175.0), 0)
    ingest_beacon(nt, beacon(3, 3.0, lbest=153.0), 0)
    ingest_beacon(nt, beacon(4, 4.0), 0)
    assert gbest_from_crnt(nt) == 175.0


@given(st.lists(st.none() | st.floats(0, 5000), max_size=12))
def test_gbest_is_max_of_present(values):
    nt = NeighborTable(0)
    for i, v in enumerate(values):
        ingest_beacon(nt, beacon(i + 1, 1.0, lbest=v), 0)
    present = [v for v in values if v is not None]
    assert gbest_from_crnt(nt) == (max(present) if present else None)


def test_store_matches_per_vehicle_tables():
    rng = np.random.default_rng(9)
    n = 8
    store = NeighborStore(n)
    tables = [NeighborTable(i) for i in range(n)]
    t = 0
    for _ in range(60):
        t += int(rng.integers(1, 40_000))
        sender = int(rng.integers(n))
        rx = np.flatnonzero(rng.random(n) < 0.6)
        lb = None if rng.random() < 0.5 else float(rng.uniform(0, 900))
        b = beacon(sender, float(rng.uniform(0, 2000)), t, lb)
        store.ingest(rx, b, t)
        for r in rx.tolist():
            ingest_beacon(tables[r], b, t)
    for i in range(n):
        expect = prune(tables[i], t, 300_000)
        got = store.table_for(i, t, 300_000)
        assert got.entries == expect.entries
