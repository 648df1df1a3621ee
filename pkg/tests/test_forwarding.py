import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import hand_trace_segments, rear_distances
from pcbb.beaconing import NeighborTable, ingest_beacon
from pcbb.core import Beacon, Position
from pcbb.forwarding import (
    Boundaries,
    PsoParams,
    PsoState,
    SelectionError,
    cbb_boundaries,
    cbb_expansion,
    cluster_segments,
    pcbb_boundaries,
    progress_list,
    pso_update,
    rear_neighbors,
    segment_fitness,
    select_candidate,
    success_passes,
    success_percentage,
)

SENDER = Position(1000.0)
TABLE_2 = [(520, 90, 15), (610, 90, 15), (700, 120, 30), (820, 80, 15), (900, 0, 1)]


def table(xs, owner=999, lbests=None):
    nt = NeighborTable(owner)
    for i, x in enumerate(xs):
        lb = None if lbests is None else lbests[i]
        ingest_beacon(nt, Beacon(i, Position(float(x), 1), 20.0, 1, 0, lb), 0)
    return nt


def behind(*dists):
    return table([SENDER.x - d for d in dists])


def test_select_candidate():
    assert select_candidate(NeighborTable(0), SENDER) is None
    assert select_candidate(behind(100, 900, 400), SENDER) == (1, 900.0)
    assert select_candidate(behind(900, 900), SENDER) == (0, 900.0)
    # vehicles ahead never qualify
    assert select_candidate(table([1500.0, 1900.0]), SENDER) is None


def test_rear_follows_heading():
    nt = table([900.0, 1100.0])
    assert [e.id for e, _ in rear_neighbors(nt, SENDER, 1)] == [0]
    assert [e.id for e, _ in rear_neighbors(nt, SENDER, -1)] == [1]


@pytest.mark.parametrize("nei, pct, ok", [(30, 200.0, True), (10, 0.0, False), (11, 10.0, False), (12, 20.0, True)])
def test_success_percentage(nei, pct, ok):
    assert success_percentage(nei, 10) == pytest.approx(pct)
    assert success_passes(nei, 10) is ok


def test_cbb_expansion_steps():
    steps = cbb_expansion(900.0, 10)
    assert steps[:2] == pytest.approx([810.0, 720.0])
    assert steps[-1] == 0.0 and len(steps) == 10
    assert all(a > b for a, b in zip(steps, steps[1:]))
    assert cbb_expansion(900.0, 1) == [0.0]


def test_cbb_boundaries():
    dense = behind(900, *np.linspace(10, 880, 29))
    b = cbb_boundaries(dense, SENDER, 10)
    assert (b.min_b, b.max_b) == (pytest.approx(810.0), 900.0)
    sparse = behind(900, 500, 100)
    assert cbb_boundaries(sparse, SENDER, 10) == Boundaries(0.0, 900.0)
    assert cbb_boundaries(dense, SENDER, 1) == Boundaries(0.0, 900.0)
    with pytest.raises(SelectionError):
        cbb_boundaries(behind(900), SENDER)


@pytest.mark.parametrize(
    "progress, count, length, expected",
    [(700, 30, 120, 175), (520, 15, 90, 86), (610, 15, 90, 101), (820, 15, 80, 153), (900, 1, 0, 0)],
)
def test_segment_fitness_rows(progress, count, length, expected):
    assert segment_fitness(progress, count, length) == expected


def test_cluster_examples():
    pl = cluster_segments(behind(900), SENDER)
    (only,) = pl.segments
    assert (only.progress, only.length, only.vehicle_count, only.fitness) == (900, 0, 1, 0)
    pl = cluster_segments(behind(900, 880, 860, 500, 490), SENDER)
    got = [(s.progress, s.length, s.vehicle_count) for s in pl]
    assert got == [(500, 10, 2), (900, 40, 3)]
    pl = cluster_segments(behind(*range(100, 1000, 100)), SENDER)
    assert len(pl) == 1
    with pytest.raises(SelectionError):
        cluster_segments(NeighborTable(0), SENDER)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 999), min_size=1, max_size=20))
def test_cluster_partition_matches_hand_trace(dists):
    nt = behind(*[d + 1 for d in dists])
    pl = cluster_segments(nt, SENDER)
    expect = hand_trace_segments(rear_distances([(e.id, e.position.x) for e in nt], SENDER.x))
    assert [(s.progress, s.length, s.vehicle_count, s.members) for s in pl] == expect
    members = [m for s in pl for m in s.members]
    assert sorted(members) == sorted(e.id for e in nt)
    assert all(a.progress < b.progress for a, b in zip(pl.segments, pl.segments[1:]))


def test_progress_list_best_and_ties():
    pl = progress_list(TABLE_2)
    assert pl.best().progress == 700 and pl.best().fitness == 175
    tie = progress_list([(100, 10, 2), (200, 20, 2)])
    assert tie.best().progress == 200


def test_pso_update_literal_arithmetic():
    # 700*0.1 + 2*0.65*(690-700) + 2*0.7*(720-700) = 70 - 13 + 28
    fit, new_l = pso_update(PsoState(700.0, 690.0, 720.0), PsoParams(), 0.1, 0.65, 0.7)
    assert fit == pytest.approx(85.0)
    assert new_l == pytest.approx(775.0)


def test_pso_update_fixpoints():
    fit, new_l = pso_update(PsoState(100.0, 100.0, 100.0), PsoParams(), 0.1, 0.37, 0.92)
    assert (fit, new_l) == (pytest.approx(10.0), pytest.approx(110.0))
    assert pso_update(PsoState(0.0, 0.0, 0.0), PsoParams(), 0.3, 0.5, 0.5) == (0.0, 0.0)
    # absent pBest and gBest leave only the inertia term
    fit, new_l = pso_update(PsoState(400.0, None, None), PsoParams(), 0.2, 0.9, 0.9)
    assert (fit, new_l) == (pytest.approx(80.0), pytest.approx(480.0))


def test_pcbb_boundaries_table_example():
    state = PsoState(p_best=690.0, g_best=720.0)
    b = pcbb_boundaries(progress_list(TABLE_2), state, 900.0, draws=(0.1, 0.65, 0.7))
    assert (b.min_b, b.max_b) == (pytest.approx(775.0), 900.0)
    assert state.p_best == pytest.approx(775.0) and state.runs == 1


def test_pcbb_clamps_past_candidate():
    state = PsoState(p_best=5000.0, g_best=5000.0)
    b = pcbb_boundaries(progress_list(TABLE_2), state, 900.0, draws=(0.5, 1.0, 1.0))
    assert b == Boundaries(899.0, 900.0)


def test_pcbb_gbest_absent_uses_lbest():
    state = PsoState(p_best=700.0)
    b = pcbb_boundaries(progress_list(TABLE_2), state, 900.0, draws=(0.2, 0.5, 0.5))
    # both difference terms vanish: 700 + 0.2 * 700
    assert b.min_b == pytest.approx(840.0)


def test_pcbb_first_send_has_zero_history():
    state = PsoState()
    b = pcbb_boundaries(progress_list(TABLE_2), state, 900.0, draws=(0.1, 0.65, 0.7))
    # 0 + 0.1*700 + 2*0.65*(0-700) = -840, clamped
    assert b.min_b == 0.0 and state.p_best == 0.0


def test_pcbb_errors():
    with pytest.raises(SelectionError):
        pcbb_boundaries(progress_list([]), PsoState(), 900.0, draws=(0.1, 0.5, 0.5))
    with pytest.raises(ValueError):
        pcbb_boundaries(progress_list(TABLE_2), PsoState(), 0.0, draws=(0.1, 0.5, 0.5))
    with pytest.raises(ValueError):
        pcbb_boundaries(progress_list(TABLE_2), PsoState(), 900.0)


def test_boundaries_invariant_fuzz():
    rng = np.random.default_rng(2024)
    params = PsoParams()
    for _ in range(100_000):
        dis = float(rng.uniform(0.5, 2000))
        state = PsoState(p_best=float(rng.uniform(0, 3000)), g_best=None if rng.random() < 0.3 else float(rng.uniform(0, 3000)))
        rows = [(float(rng.uniform(1, 2000)), float(rng.uniform(0, 300)), int(rng.integers(1, 40)))]
        b = pcbb_boundaries(progress_list(rows), state, dis, rng, params)
        assert 0 <= b.min_b < b.max_b == dis


@given(
    st.lists(st.tuples(st.integers(1, 2000), st.integers(0, 400), st.integers(1, 40)), min_size=1, max_size=8, unique_by=lambda r: r[0]),
    st.sampled_from([0.25, 0.5, 2.0, 4.0, 8.0]),
)
def test_best_segment_is_scale_invariant(rows, k):
    base = progress_list(rows).best()
    scaled = progress_list([(p * k, l * k, n) for p, l, n in rows]).best()
    assert scaled.progress == base.progress * k


@given(st.floats(1, 5000), st.integers(2, 50))
def test_cbb_expansion_monotone(dis, n_max):
    steps = cbb_expansion(dis, n_max)
    assert len(steps) == n_max
    assert all(a > b for a, b in zip(steps, steps[1:]))
    assert all(0 <= s < dis for s in steps)


def test_progress_list_csv(tmp_path):
    path = tmp_path / "pl.csv"
    progress_list(TABLE_2).to_csv(path)
    lines = path.read_text().splitlines()
    assert len(lines) == 6
    assert lines[3].split(",")[-1] == "175"
