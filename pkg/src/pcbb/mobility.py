"""Highway fleet generation and constant-velocity motion on a wrap-around road."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

from .core import Position

KMH = 1000 / 3600


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class Vehicle:
    id: int
    position: Position
    speed: float  # m/s
    heading: int = 1


@dataclass(frozen=True)
class Fleet:
    vehicles: tuple[Vehicle, ...]
    road_length: float
    lane_count: int

    def __post_init__(self):
        ids = [v.id for v in self.vehicles]
        if len(set(ids)) != len(ids):
            raise ValueError("vehicle ids must be unique")

    def __len__(self):
        return len(self.vehicles)

    def arrays(self):
        """(x, lane, speed, heading) as numpy arrays in vehicle order."""
        x = np.array([v.position.x for v in self.vehicles], dtype=float)
        lane = np.array([v.position.lane for v in self.vehicles], dtype=np.int64)
        speed = np.array([v.speed for v in self.vehicles], dtype=float)
        heading = np.array([v.heading for v in self.vehicles], dtype=np.int64)
        return x, lane, speed, heading


def _place_lane(rng: np.random.Generator, n: int, length: float, headway: float) -> np.ndarray:
    # uniform placement with a hard minimum gap: sample in the reduced
    # interval, sort, then re-insert the gaps (also keeps the seam gap)
    slack = length - n * headway
    u = np.sort(rng.uniform(0.0, slack, size=n))
    return u + headway * np.arange(n)


def spawn_fleet(
    count: int,
    road_length: float,
    lane_count: int,
    speed_min: float,
    speed_max: float,
    seed: int | np.random.Generator,
    *,
    min_headway: float = 5.0,
    bidirectional: bool = False,
) -> Fleet:
    """Place ``count`` vehicles uniformly over the road and lanes.

    Speeds are in m/s. With ``bidirectional`` the upper half of the lanes
    drive in the negative direction.
    """
    if count < 1:
        raise ValueError("vehicle count must be >= 1")
    if road_length <= 0 or lane_count < 1 or min_headway < 0:
        raise ValueError("road length, lane count and headway must be positive")
    if not 0 < speed_min <= speed_max:
        raise ValueError("need 0 < speed_min <= speed_max")
    per_lane = int(road_length // min_headway) if min_headway > 0 else count
    if count > per_lane * lane_count:
        raise CapacityError(
            f"{count} vehicles do not fit on {lane_count} x {road_length} m "
            f"with {min_headway} m headway"
        )
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    while True:
        lanes = rng.integers(1, lane_count + 1, size=count)
        counts = np.bincount(lanes, minlength=lane_count + 1)[1:]
        if counts.max() <= per_lane:
            break
    x = np.empty(count)
    for lane in range(1, lane_count + 1):
        idx = np.flatnonzero(lanes == lane)
        if idx.size:
            x[idx] = rng.permutation(_place_lane(rng, idx.size, road_length, min_headway))
    speeds = rng.uniform(speed_min, speed_max, size=count)
    upper = (lane_count + 1) // 2
    vehicles = tuple(
        Vehicle(
            id=i,
            position=Position(float(x[i]), int(lanes[i])),
            speed=float(speeds[i]),
            heading=-1 if bidirectional and lanes[i] > upper else 1,
        )
        for i in range(count)
    )
    return Fleet(vehicles, float(road_length), int(lane_count))


def advance(fleet: Fleet, dt_us: int) -> Fleet:
    """Move every vehicle for ``dt_us`` microseconds, wrapping at road ends."""
    if dt_us <= 0:
        raise ValueError("dt must be positive")
    dt = dt_us * 1e-6
    L = fleet.road_length
    moved = tuple(
        replace(v, position=Position((v.position.x + v.heading * v.speed * dt) % L, v.position.lane))
        for v in fleet.vehicles
    )
    return replace(fleet, vehicles=moved)


def positions_at(x0: np.ndarray, speed: np.ndarray, heading: np.ndarray, t_us: int, road_length: float):
    """Vectorised form of ``advance`` from the initial snapshot."""
    return np.mod(x0 + heading * speed * (t_us * 1e-6), road_length)


def write_snapshots(path, fleet: Fleet, times_us: Iterable[int]) -> None:
    """CSV export: time_us, vehicle_id, x_m, lane, speed_mps."""
    x0, lane, speed, heading = fleet.arrays()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_us", "vehicle_id", "x_m", "lane", "speed_mps"])
        for t in times_us:
            xs = positions_at(x0, speed, heading, t, fleet.road_length)
            for v, xv in zip(fleet.vehicles, xs):
                w.writerow([t, v.id, f"{xv:.3f}", v.position.lane, f"{v.speed:.3f}"])
