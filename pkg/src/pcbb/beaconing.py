"""Periodic beacons, neighbour tables and the CRNT-derived gBest.

``NeighborTable`` is the per-vehicle view used by forwarder selection.
``NeighborStore`` keeps every vehicle's table as dense arrays so the engine
can ingest one beacon into all of its receivers in a single step; it hands
out ``NeighborTable`` snapshots on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .core import Beacon, Position, distance

DEFAULT_TTL_US = 300_000


@dataclass(frozen=True)
class BeaconParams:
    rate_hz: float = 10.0
    ttl_ms: float = 300.0

    def __post_init__(self):
        if self.rate_hz <= 0 or self.ttl_ms <= 0:
            raise ValueError("beacon rate and ttl must be positive")

    @property
    def period_us(self) -> int:
        return int(round(1e6 / self.rate_hz))

    @property
    def ttl_us(self) -> int:
        return int(round(self.ttl_ms * 1000))


@dataclass(frozen=True)
class NeighborEntry:
    id: int
    position: Position
    speed: float
    heading: int
    last_seen: int
    reported_lbest: Optional[float] = None


@dataclass
class NeighborTable:
    owner: int
    entries: dict[int, NeighborEntry] = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[NeighborEntry]:
        return iter(self.entries.values())

    def __contains__(self, vid):
        return vid in self.entries

    def by_distance(self, origin: Position, descending: bool = True) -> list[NeighborEntry]:
        return sorted(
            self.entries.values(),
            key=lambda e: (-distance(origin, e.position) if descending else distance(origin, e.position), e.id),
        )

    def farthest(self, origin: Position) -> Optional[NeighborEntry]:
        ordered = self.by_distance(origin)
        return ordered[0] if ordered else None


def beacon_schedule(period_us: int, phase_us: int, horizon_us: int) -> list[int]:
    """Due times ``phase + k * period`` strictly before the horizon."""
    return list(range(phase_us, horizon_us, period_us))


def draw_phases(n: int, period_us: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, period_us, size=n)


def emit_beacon(vehicle, t: int, position: Optional[Position] = None, lbest: Optional[float] = None) -> Beacon:
    """Build the beacon ``vehicle`` sends at ``t``. ``position`` overrides the
    vehicle's stored position (the engine passes the lazily advanced one)."""
    return Beacon(
        sender_id=vehicle.id,
        position=position if position is not None else vehicle.position,
        speed=vehicle.speed,
        heading=vehicle.heading,
        timestamp=t,
        piggyback_lbest=lbest,
    )


def ingest_beacon(nt: NeighborTable, b: Beacon, t: int) -> NeighborTable:
    if b.sender_id == nt.owner:
        return nt
    nt.entries[b.sender_id] = NeighborEntry(
        id=b.sender_id,
        position=b.position,
        speed=b.speed,
        heading=b.heading,
        last_seen=t,
        reported_lbest=b.piggyback_lbest,
    )
    return nt


def prune(nt: NeighborTable, t: int, ttl: int = DEFAULT_TTL_US) -> NeighborTable:
    if ttl <= 0:
        raise ValueError("ttl must be positive")
    nt.entries = {k: e for k, e in nt.entries.items() if t - e.last_seen <= ttl}
    return nt


def gbest_from_crnt(nt: NeighborTable) -> Optional[float]:
    reported = [e.reported_lbest for e in nt if e.reported_lbest is not None]
    return max(reported) if reported else None


class NeighborStore:
    """Dense neighbour state for ``n`` vehicles: row = owner, column = neighbour."""

    def __init__(self, n: int):
        self.n = n
        self.last_seen = np.full((n, n), -1, dtype=np.int64)
        self.x = np.zeros((n, n))
        self.lane = np.zeros((n, n), dtype=np.int16)
        self.speed = np.zeros((n, n))
        self.heading = np.zeros((n, n), dtype=np.int8)
        self.lbest = np.full((n, n), np.nan)

    def ingest(self, receivers: np.ndarray, b: Beacon, t: int) -> None:
        receivers = receivers[receivers != b.sender_id]
        col = b.sender_id
        self.last_seen[receivers, col] = t
        self.x[receivers, col] = b.position.x
        self.lane[receivers, col] = b.position.lane
        self.speed[receivers, col] = b.speed
        self.heading[receivers, col] = b.heading
        self.lbest[receivers, col] = np.nan if b.piggyback_lbest is None else b.piggyback_lbest

    def table_for(self, owner: int, t: int, ttl: int) -> NeighborTable:
        """Fresh (pruned) table of ``owner`` at time ``t``."""
        row_seen = self.last_seen[owner]
        cols = np.flatnonzero((row_seen >= 0) & (t - row_seen <= ttl))
        entries = {}
        for c in cols:
            lb = self.lbest[owner, c]
            entries[int(c)] = NeighborEntry(
                id=int(c),
                position=Position(float(self.x[owner, c]), int(self.lane[owner, c])),
                speed=float(self.speed[owner, c]),
                heading=int(self.heading[owner, c]),
                last_seen=int(row_seen[c]),
                reported_lbest=None if np.isnan(lb) else float(lb),
            )
        entries.pop(owner, None)
        return NeighborTable(owner, entries)
