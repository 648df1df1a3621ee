"""Forwarder selection: candidate choice, segment boundaries and the PSO step.

Distances are measured from the sender to neighbours *behind* it, i.e. in
the direction opposite to its heading, which is where an emergency warning
has to travel.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .beaconing import NeighborEntry, NeighborTable
from .core import Position, distance


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentStats:
    progress: float
    length: float
    vehicle_count: int
    fitness: int = 0
    members: tuple[int, ...] = field(default=(), compare=False)


@dataclass(frozen=True)
class ProgressList:
    segments: tuple[SegmentStats, ...]

    def __post_init__(self):
        prog = [s.progress for s in self.segments]
        if any(b <= a for a, b in zip(prog, prog[1:])):
            raise ValueError("progress list must be strictly increasing in progress")

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def best(self) -> SegmentStats:
        """Max-fitness segment; ties go to the farther one."""
        if not self.segments:
            raise SelectionError("empty progress list")
        return max(self.segments, key=lambda s: (s.fitness, s.progress))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["progress_m", "segment_length_m", "vehicles", "fitness"])
            for s in self.segments:
                w.writerow([f"{s.progress:g}", f"{s.length:g}", s.vehicle_count, s.fitness])


@dataclass(frozen=True)
class PsoParams:
    w_range: tuple[float, float] = (0.1, 0.5)
    c1: float = 2.0
    c2: float = 2.0
    rand_range: tuple[float, float] = (0.1, 1.0)

    def draw(self, rng: np.random.Generator) -> tuple[float, float, float]:
        w = rng.uniform(*self.w_range)
        r1 = rng.uniform(*self.rand_range)
        r2 = rng.uniform(*self.rand_range)
        return float(w), float(r1), float(r2)


@dataclass
class PsoState:
    """Per-vehicle PSO memory. A vehicle that has never sent starts from a
    zero history; ``None`` for pBest/gBest means "use the current lBest"."""

    l_best: float = 0.0
    p_best: Optional[float] = 0.0
    g_best: Optional[float] = None
    runs: int = 0


@dataclass(frozen=True)
class Boundaries:
    min_b: float
    max_b: float

    def __post_init__(self):
        if not 0 <= self.min_b < self.max_b:
            raise ValueError(f"need 0 <= min_b < max_b, got ({self.min_b}, {self.max_b})")

    def contains(self, d: float) -> bool:
        return self.min_b <= d <= self.max_b


def rear_neighbors(nt: NeighborTable, sender_pos: Position, heading: int = 1) -> list[tuple[NeighborEntry, float]]:
    """Entries strictly behind the sender with their distances, farthest first
    (ties by lower id)."""
    rear = [
        (e, distance(sender_pos, e.position))
        for e in nt
        if (e.position.x - sender_pos.x) * heading < 0
    ]
    rear.sort(key=lambda pair: (-pair[1], pair[0].id))
    return rear


def select_candidate(nt: NeighborTable, sender_pos: Position, heading: int = 1) -> Optional[tuple[int, float]]:
    rear = rear_neighbors(nt, sender_pos, heading)
    if not rear:
        return None
    entry, d = rear[0]
    return entry.id, d


def success_percentage(nei_n: int, n_max: int) -> float:
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    return (nei_n - n_max) * 100 / n_max


def success_passes(nei_n: int, n_max: int) -> bool:
    return success_percentage(nei_n, n_max) > n_max


def cbb_expansion(dis: float, n_max: int) -> list[float]:
    """Successive MinB candidates ``dis - k * dis / n_max`` for k = 1..n_max."""
    dif = dis / n_max
    return [dis - k * dif if k < n_max else 0.0 for k in range(1, n_max + 1)]


def cbb_boundaries(nt: NeighborTable, sender_pos: Position, n_max: int = 10, heading: int = 1) -> Boundaries:
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    rear = rear_neighbors(nt, sender_pos, heading)
    if len(rear) < 2:
        raise SelectionError("CBB needs at least two rear neighbours")
    dis = rear[0][1]
    # The pass test depends only on the table size, so it either holds at
    # the first step or the segment grows all the way to the sender.
    passes = success_passes(len(nt), n_max)
    for k, min_b in enumerate(cbb_expansion(dis, n_max), start=1):
        if passes or k == n_max:
            return Boundaries(min_b, dis)
    raise AssertionError("unreachable")


def segment_fitness(progress: float, vehicle_count: int, length: float) -> int:
    """progress * vehicles / length, truncated; zero-length segments score 0."""
    if length <= 0:
        return 0
    return int(math.floor(progress * vehicle_count / length))


def cluster_segments(nt: NeighborTable, sender_pos: Position, heading: int = 1) -> ProgressList:
    rear = rear_neighbors(nt, sender_pos, heading)
    if not rear:
        raise SelectionError("no rear neighbours to cluster")
    groups: list[list[tuple[int, float]]] = []
    prev_gap = None
    for i, (entry, d) in enumerate(rear):
        if i == 0:
            groups.append([(entry.id, d)])
            continue
        gap = rear[i - 1][1] - d
        # co-located vehicles never open a segment of their own
        if prev_gap is None or gap < 2 * prev_gap or gap == 0:
            groups[-1].append((entry.id, d))
        else:
            groups.append([(entry.id, d)])
        prev_gap = gap
    segments = []
    for g in reversed(groups):
        progress = g[0][1]
        length = g[0][1] - g[-1][1]
        segments.append(
            SegmentStats(
                progress=progress,
                length=length,
                vehicle_count=len(g),
                fitness=segment_fitness(progress, len(g), length),
                members=tuple(vid for vid, _ in g),
            )
        )
    return ProgressList(tuple(segments))


def progress_list(rows: Iterable[tuple[float, float, int]]) -> ProgressList:
    """Build a progress list from ``(progress, length, vehicles)`` rows."""
    segs = [SegmentStats(p, l, n, segment_fitness(p, n, l)) for p, l, n in rows]
    return ProgressList(tuple(sorted(segs, key=lambda s: s.progress)))


def pso_update(state: PsoState, params: PsoParams, w: float, r1: float, r2: float) -> tuple[float, float]:
    """One velocity/position step; returns ``(fit, new_l_best)``.

    Missing pBest/gBest fall back to the current lBest.
    """
    l = state.l_best
    p = l if state.p_best is None else state.p_best
    g = l if state.g_best is None else state.g_best
    fit = l * w + params.c1 * r1 * (p - l) + params.c2 * r2 * (g - l)
    return fit, p + fit


def pcbb_boundaries(
    pl: ProgressList,
    state: PsoState,
    candidate_dis: float,
    rng: Optional[np.random.Generator] = None,
    params: PsoParams = PsoParams(),
    *,
    draws: Optional[tuple[float, float, float]] = None,
) -> Boundaries:
    """Contention boundaries from the best segment refined by one PSO step.

    ``state.l_best`` is overwritten with the best segment's progress and,
    after the update, ``state.p_best`` holds the new lBest for next time.
    """
    if not len(pl):
        raise SelectionError("empty progress list")
    if candidate_dis <= 0:
        raise ValueError("candidate distance must be positive")
    if draws is None:
        if rng is None:
            raise ValueError("need an rng or explicit draws")
        draws = params.draw(rng)
    state.l_best = pl.best().progress
    _, new_l = pso_update(state, params, *draws)
    hi = max(candidate_dis - 1.0, 0.0)
    min_b = min(max(new_l, 0.0), hi)
    state.p_best = max(new_l, 0.0)
    state.l_best = state.p_best
    state.runs += 1
    return Boundaries(min_b, candidate_dis)
