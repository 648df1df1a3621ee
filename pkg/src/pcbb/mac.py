"""802.11p-style timing: frame airtime, backoff draws and CSMA start times."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class MacParams:
    slot_us: int = 16
    sifs_us: int = 32  # carried for completeness; broadcast has no ACKs
    difs_us: int = 64
    cw_min: int = 15
    cw_max: int = 1023
    data_rate_bps: int = 6_000_000
    plcp_us: int = 8
    symbol_us: int = 8
    cw_in_slots: bool = True

    def __post_init__(self):
        for name in ("slot_us", "sifs_us", "difs_us", "data_rate_bps", "plcp_us", "symbol_us"):
            if getattr(self, name) <= 0:
                raise ValueError(f"mac.{name} must be positive")
        if not 0 <= self.cw_min <= self.cw_max:
            raise ValueError("need 0 <= cw_min <= cw_max")

    @property
    def bits_per_symbol(self) -> int:
        return int(round(self.data_rate_bps * self.symbol_us * 1e-6))

    def backoff_us(self, draw: int) -> int:
        """Convert a backoff draw to microseconds (slots, or raw us)."""
        return draw * self.slot_us if self.cw_in_slots else draw


def tx_duration(params: MacParams, payload_bytes: int) -> int:
    """Airtime in microseconds: PLCP header plus whole OFDM symbols."""
    if payload_bytes <= 0:
        raise ValueError("payload must be positive")
    symbols = math.ceil(payload_bytes * 8 / params.bits_per_symbol)
    return params.plcp_us + symbols * params.symbol_us


def draw_backoff(cw: int, rng: np.random.Generator) -> int:
    if cw < 0:
        raise ValueError("contention window must be >= 0")
    return int(rng.integers(0, cw + 1))


def _merge(intervals: Iterable[tuple[int, int]]) -> list[tuple[int, int]]:
    merged: list[list[int]] = []
    for s, e in sorted(intervals):
        if e <= s:
            continue
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged]


def csma_start_time(
    params: MacParams,
    t_ready: int,
    backoff: int,
    busy: Sequence[tuple[int, int]] = (),
) -> int:
    """Start time of a frame ready at ``t_ready`` given the busy intervals
    ``[start, end)`` sensed at the transmitter.

    The channel must stay idle for DIFS, then the backoff counts down one
    slot per fully idle slot; a busy period freezes the countdown and a
    fresh DIFS is needed afterwards. A busy period starting exactly at the
    computed start time does not stop the transmission.
    """
    slot = params.backoff_us(1)
    remaining = backoff
    t = t_ready
    for s, e in _merge(busy):
        if e <= t:
            continue
        if s <= t:
            t = e
            continue
        # idle in [t, s)
        if t + params.difs_us + remaining * slot <= s:
            return t + params.difs_us + remaining * slot
        elapsed = s - t - params.difs_us
        if elapsed > 0 and slot > 0:
            remaining = max(0, remaining - elapsed // slot)
        t = e
    return t + params.difs_us + remaining * slot


def csma_transmit(params, frame: bytes, t_ready: int, cw: int, busy, rng) -> tuple[int, int]:
    """Draw a backoff and return ``(start, duration)`` for ``frame``."""
    start = csma_start_time(params, t_ready, draw_backoff(cw, rng), busy)
    return start, tx_duration(params, len(frame))
