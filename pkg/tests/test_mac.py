import numpy as np
import pytest
from hypothesis import given, strategies as st

from pcbb.mac import MacParams, csma_start_time, csma_transmit, draw_backoff, tx_duration

MAC = MacParams()


def test_frame_airtime():
    assert MAC.bits_per_symbol == 48
    assert tx_duration(MAC, 512) == 8 + 86 * 8 == 696
    assert tx_duration(MAC, 6) == 16


@given(st.integers(1, 4000))
def test_airtime_monotone(n):
    assert tx_duration(MAC, 2 * n) >= tx_duration(MAC, n)
    assert tx_duration(MAC, n) == tx_duration(MAC, n)


def test_airtime_rejects_empty_frame():
    with pytest.raises(ValueError):
        tx_duration(MAC, 0)


def test_backoff_draws():
    rng = np.random.default_rng(11)
    assert draw_backoff(0, rng) == 0
    draws = np.array([draw_backoff(15, rng) for _ in range(100_000)])
    assert draws.min() == 0 and draws.max() == 15
    assert draws.mean() == pytest.approx(7.5, abs=0.05)
    a = [draw_backoff(15, np.random.default_rng(3)) for _ in range(5)]
    assert a == [draw_backoff(15, np.random.default_rng(3)) for _ in range(5)]
    with pytest.raises(ValueError):
        draw_backoff(-1, rng)


def test_cw_units():
    assert MAC.backoff_us(3) == 48
    assert MacParams(cw_in_slots=False).backoff_us(3) == 3


def test_idle_channel_start_times():
    assert csma_start_time(MAC, 1000, 0) == 1064
    assert csma_start_time(MAC, 0, 3) == 112


def test_busy_until_defers():
    assert csma_start_time(MAC, 0, 0, [(0, 500)]) == 564
    assert csma_start_time(MAC, 0, 2, [(0, 500)]) >= 564


def test_busy_starting_at_computed_start_does_not_stop_it():
    assert csma_start_time(MAC, 0, 3, [(112, 900)]) == 112


def test_countdown_freezes_during_busy():
    # DIFS done at 64, two slots elapse (to 96), busy 100..300,
    # then DIFS again and the remaining 3 slots
    assert csma_start_time(MAC, 0, 5, [(100, 300)]) == 300 + 64 + 3 * 16


def reference_start(t_ready, backoff, busy, mac=MAC):
    """Microsecond-stepping reference: DIFS of idle, then one decrement per
    fully idle slot; any busy microsecond restarts the DIFS wait."""
    def is_busy(t):
        return any(s <= t < e for s, e in busy)

    t, idle_run, remaining, slot_run = t_ready, 0, backoff, 0
    while True:
        if idle_run >= mac.difs_us and remaining == 0:
            return t
        if is_busy(t):
            idle_run, slot_run = 0, 0
        else:
            idle_run += 1
            if idle_run > mac.difs_us:
                slot_run += 1
                if slot_run == mac.slot_us:
                    remaining -= 1
                    slot_run = 0
        t += 1


intervals = st.lists(
    st.tuples(st.integers(0, 1500), st.integers(1, 400)).map(lambda p: (p[0], p[0] + p[1])),
    max_size=4,
)


@given(t_ready=st.integers(0, 800), backoff=st.integers(0, 15), busy=intervals)
def test_start_time_matches_reference(t_ready, backoff, busy):
    got = csma_start_time(MAC, t_ready, backoff, busy)
    assert got == reference_start(t_ready, backoff, busy)
    assert not any(s < got < e for s, e in busy)


def test_transmit_returns_airtime():
    start, dur = csma_transmit(MAC, bytes(512), 0, 15, [], np.random.default_rng(0))
    assert dur == 696
    assert 64 <= start <= 64 + 15 * 16 and (start - 64) % 16 == 0


def test_params_validation():
    with pytest.raises(ValueError):
        MacParams(slot_us=0)
    with pytest.raises(ValueError):
        MacParams(cw_min=20, cw_max=10)
