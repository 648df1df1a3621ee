"""Reception, delay and collision statistics computed from event traces."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import Outcome
from .engine import EventTrace


@dataclass(frozen=True)
class ReceptionBin:
    distance_lo: float
    distance_hi: float
    attempts: int
    received: int

    @property
    def probability(self) -> float:
        return self.received / self.attempts if self.attempts else float("nan")


@dataclass(frozen=True)
class ReceptionCurve:
    bins: tuple[ReceptionBin, ...]

    def mean_probability(self, lo: float, hi: float) -> float:
        """Mean of the per-bin probabilities for bins inside ``(lo, hi]``."""
        ps = [b.probability for b in self.bins if b.distance_lo >= lo and b.distance_hi <= hi and b.attempts]
        return float(np.mean(ps)) if ps else float("nan")


@dataclass(frozen=True)
class DelaySample:
    t: float  # window start, seconds (or distance bin start, metres)
    mean_delay_us: float
    count: int


@dataclass(frozen=True)
class DelaySeries:
    samples: tuple[DelaySample, ...]

    def final(self) -> float:
        return self.samples[-1].mean_delay_us if self.samples else float("nan")


@dataclass(frozen=True)
class CollisionSecond:
    t_s: int
    collided: int
    attempts: int

    @property
    def ratio(self) -> float:
        return self.collided / self.attempts if self.attempts else 0.0


@dataclass(frozen=True)
class CollisionReport:
    seconds: tuple[CollisionSecond, ...]

    @property
    def total_collided(self) -> int:
        return sum(s.collided for s in self.seconds)

    def final_ratio(self) -> float:
        return self.seconds[-1].ratio if self.seconds else 0.0


def first_receptions(trace: EventTrace) -> dict[tuple[int, int], dict[int, int]]:
    """``{msg_key: {vehicle: first time it received that message}}``."""
    first: dict[tuple[int, int], dict[int, int]] = {}
    for rec, rx, out, _ in trace.emergency_deliveries():
        key = (rec.msg_sender, rec.msg_id)
        got = first.setdefault(key, {})
        for v in rx[out == Outcome.RECEIVED].tolist():
            if v not in got:
                got[v] = rec.end
    return first


def _bin_index(d: np.ndarray, width: float) -> np.ndarray:
    # bins are (lo, hi]; distance 0 falls in the first bin
    return np.maximum(np.ceil(d / width).astype(np.int64) - 1, 0)


def reception_curve(trace: EventTrace, bin_width: float = 100.0) -> ReceptionCurve:
    if bin_width <= 0:
        raise ValueError("bin width must be positive")
    if not trace.originations:
        return ReceptionCurve(())
    first = first_receptions(trace)
    attempts: dict[int, int] = {}
    received: dict[int, int] = {}
    for key, o in trace.originations.items():
        got = first.get(key, {})
        idx = _bin_index(o.distances, bin_width)
        hit = np.array([v in got for v in o.vehicle_ids.tolist()], dtype=bool)
        for b, h in zip(idx.tolist(), hit.tolist()):
            attempts[b] = attempts.get(b, 0) + 1
            received[b] = received.get(b, 0) + int(h)
    top = max(attempts)
    bins = tuple(
        ReceptionBin(b * bin_width, (b + 1) * bin_width, attempts.get(b, 0), received.get(b, 0))
        for b in range(top + 1)
    )
    return ReceptionCurve(bins)


def _delays(trace: EventTrace):
    first = first_receptions(trace)
    for key, o in trace.originations.items():
        dist = dict(zip(o.vehicle_ids.tolist(), o.distances.tolist()))
        for v, t_rx in first.get(key, {}).items():
            if v == o.sender:
                continue
            yield t_rx, t_rx - o.time, dist.get(v, 0.0)


def delay_series(trace: EventTrace, sample_every: int = 1_000_000) -> DelaySeries:
    """Mean first-reception delay per time window of ``sample_every`` us."""
    if sample_every <= 0:
        raise ValueError("sample interval must be positive")
    windows: dict[int, list[int]] = {}
    for t_rx, delay, _ in _delays(trace):
        windows.setdefault(t_rx // sample_every, []).append(delay)
    return DelaySeries(
        tuple(
            DelaySample(w * sample_every / 1e6, float(np.mean(ds)), len(ds))
            for w, ds in sorted(windows.items())
        )
    )


def delay_by_distance(trace: EventTrace, bin_width: float = 100.0) -> DelaySeries:
    bins: dict[int, list[int]] = {}
    for _, delay, d in _delays(trace):
        b = int(_bin_index(np.array([d]), bin_width)[0])
        bins.setdefault(b, []).append(delay)
    return DelaySeries(
        tuple(DelaySample(b * bin_width, float(np.mean(ds)), len(ds)) for b, ds in sorted(bins.items()))
    )


def collision_report(trace: EventTrace) -> CollisionReport:
    """Per-second Collided counts over every frame type."""
    n_sec = max(1, math.ceil(trace.horizon_us / 1e6))
    collided = np.zeros(n_sec, dtype=np.int64)
    attempts = np.zeros(n_sec, dtype=np.int64)
    for rec, rx, out, _ in trace.deliveries():
        # frames still on air at the horizon count toward the last second
        s = min(rec.end // 1_000_000, n_sec - 1)
        attempts[s] += out.size
        collided[s] += int(np.count_nonzero(out == Outcome.COLLIDED))
    return CollisionReport(
        tuple(CollisionSecond(s, int(collided[s]), int(attempts[s])) for s in range(n_sec))
    )


@dataclass(frozen=True)
class RunMetrics:
    reception: ReceptionCurve
    delay: DelaySeries
    delay_distance: DelaySeries
    collisions: CollisionReport
    rebroadcasts: int
    messages: int

    def summary(self) -> dict[str, float]:
        return {
            "reception_1000_1500": self.reception.mean_probability(1000, 1500),
            "reception_0_1000": self.reception.mean_probability(0, 1000),
            "final_delay_us": self.delay.final(),
            "mean_delay_us": float(np.mean([s.mean_delay_us for s in self.delay.samples]))
            if self.delay.samples
            else float("nan"),
            "final_collision_ratio": self.collisions.final_ratio(),
            "rebroadcasts_per_message": self.rebroadcasts / self.messages if self.messages else 0.0,
        }


def compute(trace: EventTrace, bin_width: float = 100.0, sample_every: int = 1_000_000) -> RunMetrics:
    reb = sum(1 for r in trace.transmissions if r.kind == "emergency" and r.is_rebroadcast)
    return RunMetrics(
        reception_curve(trace, bin_width),
        delay_series(trace, sample_every),
        delay_by_distance(trace, bin_width),
        collision_report(trace),
        reb,
        len(trace.originations),
    )


def _write(path: Path, header: list[str], rows: list[list], dat_comment: Optional[str] = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    with open(path.with_suffix(".dat"), "w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for r in rows:
            fh.write(" ".join(str(c) for c in r) + "\n")


def _fmt(v: float) -> str:
    return "nan" if v != v else f"{v:.6f}"


def write_csvs(metrics: RunMetrics, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(
        out / "reception.csv",
        ["bin_lo", "bin_hi", "attempts", "received", "probability"],
        [[f"{b.distance_lo:g}", f"{b.distance_hi:g}", b.attempts, b.received, _fmt(b.probability)] for b in metrics.reception.bins],
    )
    _write(
        out / "delay.csv",
        ["t_s", "mean_delay_us"],
        [[f"{s.t:g}", _fmt(s.mean_delay_us)] for s in metrics.delay.samples],
    )
    _write(
        out / "delay_distance.csv",
        ["dist_m", "mean_delay_us"],
        [[f"{s.t:g}", _fmt(s.mean_delay_us)] for s in metrics.delay_distance.samples],
    )
    _write(
        out / "collisions.csv",
        ["t_s", "collided", "attempts", "ratio"],
        [[s.t_s, s.collided, s.attempts, _fmt(s.ratio)] for s in metrics.collisions.seconds],
    )
