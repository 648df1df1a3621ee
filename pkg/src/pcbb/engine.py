"""Deterministic discrete-event engine.

Events are processed in ``(time, seq)`` order and every random draw comes
from one seeded generator, so a ``(config, seed)`` pair always produces the
same trace. Vehicle positions are evaluated lazily from the initial
snapshot; propagation delay is zero and a frame's fate at every receiver is
drawn atomically when it ends.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import protocols as proto
from .beaconing import NeighborStore, draw_phases, emit_beacon
from .channel import resolve_outcomes
from .config import ConfigError, ScenarioConfig
from .core import (
    EmergencyMessage,
    FormatError,
    Outcome,
    Position,
    Transmission,
    classify,
    decode,
    encode,
)
from .mac import draw_backoff, tx_duration
from .mobility import KMH, Fleet, positions_at, spawn_fleet


class EventKind(enum.IntEnum):
    BEACON_DUE = 0
    TX_START = 1
    TX_END = 2
    DELIVERY_RESOLVE = 3
    CONTENTION_FIRE = 4
    DANGER_DETECT = 5
    METRICS_SAMPLE = 6


@dataclass(frozen=True)
class Event:
    at: int
    seq: int
    kind: EventKind
    subject: object = None

    def __lt__(self, other):
        return (self.at, self.seq) < (other.at, other.seq)


@dataclass(frozen=True)
class TxRecord:
    tx_id: int
    sender: int
    kind: str
    msg_sender: int
    msg_id: int
    hop: int
    start: int
    end: int
    x: float
    is_rebroadcast: bool = False


@dataclass
class Origination:
    key: tuple[int, int]
    time: int
    sender: int
    sender_x: float
    code: int
    vehicle_ids: np.ndarray
    distances: np.ndarray  # |x - sender_x| for vehicle_ids at origination


@dataclass
class EventTrace:
    records: list = field(default_factory=list)  # (time_us, kind, vehicle, msg_sender, msg_id, outcome, x_m)
    transmissions: list = field(default_factory=list)  # TxRecord, by tx_id
    delivery_tx: list = field(default_factory=list)
    delivery_rx: list = field(default_factory=list)
    delivery_outcome: list = field(default_factory=list)
    delivery_x: list = field(default_factory=list)
    originations: dict = field(default_factory=dict)
    vehicle_count: int = 0
    horizon_us: int = 0
    decode_errors: int = 0

    def log(self, t, kind, vehicle=-1, msg_sender=-1, msg_id=-1, outcome="", x=float("nan")):
        self.records.append((int(t), kind, int(vehicle), int(msg_sender), int(msg_id), outcome, float(x)))

    def deliveries(self):
        """Iterate ``(TxRecord, receivers, outcomes, receiver_x)``."""
        for tid, rx, out, xs in zip(self.delivery_tx, self.delivery_rx, self.delivery_outcome, self.delivery_x):
            yield self.transmissions[tid], rx, out, xs

    def emergency_deliveries(self):
        for rec, rx, out, xs in self.deliveries():
            if rec.kind == "emergency":
                yield rec, rx, out, xs

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(repr(self.records).encode())
        h.update(repr(self.transmissions).encode())
        for tid, rx, out in zip(self.delivery_tx, self.delivery_rx, self.delivery_outcome):
            h.update(tid.to_bytes(4, "little"))
            h.update(rx.tobytes())
            h.update(out.tobytes())
        for key in sorted(self.originations):
            o = self.originations[key]
            h.update(repr((o.key, o.time, o.sender, o.sender_x, o.code)).encode())
            h.update(o.distances.tobytes())
        return h.hexdigest()

    def lines(self, include_beacons: bool = True):
        """Newline-delimited export: time_us,event_kind,vehicle_id,msg_sender,msg_id,outcome,x_m."""
        yield "time_us,event_kind,vehicle_id,msg_sender,msg_id,outcome,x_m"
        rows = [r for r in self.records if include_beacons or r[3] >= 0]
        for rec, rx, out, xs in self.deliveries():
            if not include_beacons and rec.kind != "emergency":
                continue
            names = [Outcome(o).name for o in range(3)]
            for r, o, xv in zip(rx.tolist(), out.tolist(), xs.tolist()):
                rows.append((rec.end, "DeliveryResolve", r, rec.msg_sender, rec.msg_id, names[o], xv))
        rows.sort(key=lambda r: r[0])  # stable: keeps emission order within a timestamp
        for t, kind, v, ms, mid, outcome, x in rows:
            yield f"{t},{kind},{v},{ms},{mid},{outcome},{x:.3f}"

    def write(self, path, include_beacons: bool = True) -> None:
        with open(path, "w") as fh:
            for line in self.lines(include_beacons):
                fh.write(line + "\n")


# MAC phases
IDLE, DEFER, COUNTDOWN, TRANSMIT = range(4)
BEACON_PRIORITY = 2


@dataclass
class Frame:
    kind: str  # "beacon" | "emergency"
    priority: int
    cw: int
    msg: Optional[EmergencyMessage] = None
    hop: int = 0
    rebroadcast: bool = False


OutcomeHook = Callable[[Transmission, np.ndarray, np.ndarray], None]


class Simulation:
    """One run of one protocol. ``fleet`` overrides random spawning and
    ``outcome_hook(tx, receivers, outcomes)`` may edit outcomes in place."""

    def __init__(
        self,
        config: ScenarioConfig,
        seed: int,
        *,
        fleet: Optional[Fleet] = None,
        outcome_hook: Optional[OutcomeHook] = None,
    ):
        config.validate()
        self.cfg = config
        self.kind = proto.ProtocolKind(config.protocol.kind)
        self.rng = np.random.default_rng(seed)
        if fleet is None:
            fleet = spawn_fleet(
                config.vehicles,
                config.road_length_m,
                config.lanes,
                config.speed_min_kmh * KMH,
                config.speed_max_kmh * KMH,
                self.rng,
                min_headway=config.min_headway_m,
                bidirectional=config.bidirectional,
            )
        if [v.id for v in fleet.vehicles] != list(range(len(fleet))):
            raise ConfigError("fleet vehicle ids must be 0..n-1 in order")
        self.fleet = fleet
        self.n = len(fleet)
        self.x0, self.lane, self.speed, self.heading = fleet.arrays()
        self.L = fleet.road_length
        self.hook = outcome_hook
        self.horizon = config.horizon_us
        ch = config.channel
        self.cs_range = ch.cs_range_m
        self.eval_range = ch.evaluation_range_m
        self.duration = tx_duration(config.mac, config.message_bytes)

        self.trace = EventTrace(vehicle_count=self.n, horizon_us=self.horizon)
        self.neighbors = NeighborStore(self.n)
        self.fwd = [proto.ForwardingState() for _ in range(self.n)]

        self.queue: list = []
        self.seq = 0
        self._pos_cache = (-1, None)

        self.phase = [IDLE] * self.n
        self.macq: list[list[Frame]] = [[] for _ in range(self.n)]
        self.current: list[Optional[Frame]] = [None] * self.n
        self.backoff = [0] * self.n
        self.count_start = [0] * self.n
        self.token = [0] * self.n
        self.contending: set[int] = set()
        self.active: dict[int, Transmission] = {}
        self.recent: list[Transmission] = []
        self.tx_count = 0

        period = config.beacon.period_us
        phases = draw_phases(self.n, period, self.rng)
        for v in range(self.n):
            self._push(int(phases[v]), EventKind.BEACON_DUE, v)
        for ev in config.danger_schedule:
            self._push(ev.t_us, EventKind.DANGER_DETECT, ev)

    # -- plumbing -------------------------------------------------------

    def _push(self, at: int, kind: EventKind, subject=None) -> None:
        self.seq += 1
        heapq.heappush(self.queue, (at, self.seq, kind, subject))

    def positions(self, t: int) -> np.ndarray:
        if self._pos_cache[0] != t:
            self._pos_cache = (t, positions_at(self.x0, self.speed, self.heading, t, self.L))
        return self._pos_cache[1]

    def position(self, v: int, t: int) -> Position:
        return Position(float(self.positions(t)[v]), int(self.lane[v]))

    def run(self) -> EventTrace:
        handlers = {
            EventKind.BEACON_DUE: self._on_beacon_due,
            EventKind.TX_START: self._on_tx_start,
            EventKind.TX_END: self._on_tx_end,
            EventKind.CONTENTION_FIRE: self._on_contention_fire,
            EventKind.DANGER_DETECT: self._on_danger,
        }
        while self.queue:
            at, _, kind, subject = heapq.heappop(self.queue)
            if at >= self.horizon and kind is not EventKind.TX_END:
                continue
            handlers[kind](at, subject)
        return self.trace

    # -- MAC --------------------------------------------------------------

    def _sensed_busy(self, v: int, t: int) -> bool:
        if not self.active:
            return False
        xv = self.positions(t)[v]
        return any(
            tx.sender != v and abs(tx.origin.x - xv) < self.cs_range for tx in self.active.values()
        )

    def _submit(self, v: int, frame: Frame, t: int) -> None:
        q = self.macq[v]
        i = len(q)
        while i > 0 and q[i - 1].priority > frame.priority:
            i -= 1
        q.insert(i, frame)
        if self.phase[v] == IDLE:
            self._access(v, t)

    def _access(self, v: int, t: int) -> None:
        frame = self.macq[v].pop(0)
        self.current[v] = frame
        self.backoff[v] = draw_backoff(frame.cw, self.rng)
        self.contending.add(v)
        if self._sensed_busy(v, t):
            self.phase[v] = DEFER
            self.token[v] += 1
        else:
            self._countdown(v, t)

    def _countdown(self, v: int, t: int) -> None:
        self.phase[v] = COUNTDOWN
        self.count_start[v] = t
        self.token[v] += 1
        fire = t + self.cfg.mac.difs_us + self.cfg.mac.backoff_us(self.backoff[v])
        self._push(fire, EventKind.TX_START, (v, self.token[v]))

    def _freeze(self, v: int, t: int) -> None:
        mac = self.cfg.mac
        fire = self.count_start[v] + mac.difs_us + mac.backoff_us(self.backoff[v])
        if fire <= t:
            return
        elapsed = t - self.count_start[v] - mac.difs_us
        if elapsed > 0:
            used = elapsed // mac.backoff_us(1)
            self.backoff[v] = max(0, self.backoff[v] - used)
        self.phase[v] = DEFER
        self.token[v] += 1

    def _next_frame(self, v: int, t: int) -> None:
        self.current[v] = None
        self.phase[v] = IDLE
        self.contending.discard(v)
        if self.macq[v]:
            self._access(v, t)

    def _on_tx_start(self, t: int, subject) -> None:
        v, token = subject
        if token != self.token[v] or self.phase[v] != COUNTDOWN:
            return
        frame = self.current[v]
        pos = self.position(v, t)
        st = self.fwd[v]
        if frame.kind == "beacon":
            beacon = emit_beacon(self.fleet.vehicles[v], t, pos, st.lbest)
            tx = Transmission(self.tx_count, b"", v, pos, t, self.duration, "beacon", beacon=beacon)
            key = (-1, -1)
        else:
            key = frame.msg.key
            if frame.rebroadcast:
                busy_same = any(
                    a.msg_key == key and a.hop >= frame.hop and abs(a.origin.x - pos.x) < self.cs_range
                    for a in self.active.values()
                )
                decision = proto.contention_fire(st, key, busy_same)
                if isinstance(decision, proto.Cancel):
                    st.pending.pop(key, None)
                    self.trace.log(t, "RebroadcastCancel", v, key[0], key[1], decision.reason, pos.x)
                    self._next_frame(v, t)
                    return
                nt = self.neighbors.table_for(v, t, self.cfg.beacon.ttl_us)
                msg, plan = proto.prepare_rebroadcast(
                    self.kind, frame.msg, st, nt, pos, int(self.heading[v]), self.rng, self.cfg.protocol
                )
                detail = f"hop={frame.hop} cid={plan.candidate_id} minb={msg.min_b} maxb={msg.max_b} rear={plan.rear_count}"
                self.trace.log(t, "RebroadcastPlan", v, key[0], key[1], detail, pos.x)
                st.pending.pop(key, None)
                st.transmitted.add(key)
            else:
                msg = frame.msg
            tx = Transmission(
                self.tx_count, encode(msg), v, pos, t, self.duration, "emergency", frame.hop, key
            )
        self.tx_count += 1
        self.phase[v] = TRANSMIT
        self.contending.discard(v)
        self.active[tx.tx_id] = tx
        rec = TxRecord(tx.tx_id, v, tx.kind, key[0], key[1], tx.hop, t, tx.end, pos.x, frame.rebroadcast)
        self.trace.transmissions.append(rec)
        self.trace.log(t, "TxStart", v, key[0], key[1], tx.kind, pos.x)
        self._push(tx.end, EventKind.TX_END, tx)
        if self.contending:
            xs = self.positions(t)
            for u in sorted(self.contending):
                if self.phase[u] == COUNTDOWN and abs(xs[u] - pos.x) < self.cs_range:
                    self._freeze(u, t)

    def _on_tx_end(self, t: int, tx: Transmission) -> None:
        del self.active[tx.tx_id]
        self.recent = [r for r in self.recent if r.end > t - 2 * self.duration]
        self.recent.append(tx)
        key = tx.msg_key or (-1, -1)
        self.trace.log(t, "TxEnd", tx.sender, key[0], key[1], tx.kind, tx.origin.x)
        received = self._resolve_delivery(tx, t)
        v = tx.sender
        self._next_frame(v, t)
        if tx.kind == "emergency" and received.size:
            self._emergency_callbacks(tx, received, t)
        if self.contending:
            for u in sorted(self.contending):
                if self.phase[u] == DEFER and not self._sensed_busy(u, t):
                    self._countdown(u, t)

    def _resolve_delivery(self, tx: Transmission, t: int) -> np.ndarray:
        xs = self.positions(t)
        sx = tx.origin.x
        mask = np.abs(xs - sx) <= self.eval_range
        mask[tx.sender] = False
        rx = np.flatnonzero(mask)
        others = [o for o in list(self.active.values()) + self.recent if o.tx_id != tx.tx_id and o.overlaps(tx)]
        ix = np.array([o.origin.x for o in others])
        out = resolve_outcomes(self.cfg.channel, sx, xs[rx], ix, np.zeros(rx.size, bool), self.rng)
        if self.hook is not None:
            self.hook(tx, rx, out)
        self.trace.delivery_tx.append(tx.tx_id)
        self.trace.delivery_rx.append(rx.astype(np.int16))
        self.trace.delivery_outcome.append(out)
        self.trace.delivery_x.append(xs[rx].astype(np.float32))
        received = rx[out == Outcome.RECEIVED]
        if tx.kind == "beacon" and received.size:
            self.neighbors.ingest(received, tx.beacon, t)
        return received

    # -- protocol glue -----------------------------------------------------

    def _emergency_callbacks(self, tx: Transmission, received: np.ndarray, t: int) -> None:
        try:
            msg = decode(tx.frame)
        except FormatError:
            self.trace.decode_errors += len(received)
            return
        slot = self.cfg.mac.slot_us
        for v in received.tolist():
            pos = self.position(v, t)
            action = proto.on_emergency_received(
                self.kind, v, self.fwd[v], msg, t, pos, tx.origin, tx.hop,
                heading=int(self.heading[v]), t_slot=slot, params=self.cfg.protocol,
            )
            if isinstance(action, proto.RebroadcastNow):
                self.trace.log(t, "RebroadcastNow", v, msg.sender_id, msg.msg_id, "candidate", pos.x)
                prio = classify(msg.code).priority_class
                self._submit(v, Frame("emergency", prio, action.cw, msg, action.hop, True), t)
            elif isinstance(action, proto.ScheduleContention):
                self.trace.log(t, "ScheduleContention", v, msg.sender_id, msg.msg_id, str(action.fire_at), pos.x)
                self._push(action.fire_at, EventKind.CONTENTION_FIRE, (v, msg.key))
            elif action.reason != "duplicate":
                self.trace.log(t, "Drop", v, msg.sender_id, msg.msg_id, action.reason, pos.x)

    def _on_contention_fire(self, t: int, subject) -> None:
        v, key = subject
        st = self.fwd[v]
        pending = st.pending.get(key)
        if pending is None:
            return
        pos = self.position(v, t)
        busy_same = any(
            a.msg_key == key and a.hop >= pending.hop and abs(a.origin.x - pos.x) < self.cs_range
            for a in self.active.values()
        )
        decision = proto.contention_fire(st, key, busy_same)
        if isinstance(decision, proto.Cancel):
            st.pending.pop(key, None)
            self.trace.log(t, "ContentionFire", v, key[0], key[1], "Cancel:" + decision.reason, pos.x)
            return
        self.trace.log(t, "ContentionFire", v, key[0], key[1], "Rebroadcast", pos.x)
        prio = classify(pending.msg.code).priority_class
        self._submit(v, Frame("emergency", prio, self.cfg.mac.cw_min, pending.msg, pending.hop, True), t)

    def _on_beacon_due(self, t: int, v: int) -> None:
        nxt = t + self.cfg.beacon.period_us
        if nxt < self.horizon:
            self._push(nxt, EventKind.BEACON_DUE, v)
        self.trace.log(t, "BeaconDue", v)
        cur = self.current[v]
        if (cur is not None and cur.kind == "beacon" and self.phase[v] != TRANSMIT) or any(
            f.kind == "beacon" for f in self.macq[v]
        ):
            # the pending beacon is built at transmit time, so it is already fresh
            self.trace.log(t, "BeaconMerged", v)
            return
        self._submit(v, Frame("beacon", BEACON_PRIORITY, self.cfg.mac.cw_min), t)

    def _on_danger(self, t: int, ev) -> None:
        xs = self.positions(t)
        v = int(np.argmin(np.abs(xs - ev.origin_x_m)))
        pos = self.position(v, t)
        nt = self.neighbors.table_for(v, t, self.cfg.beacon.ttl_us)
        msg, plan = proto.on_danger_detected(
            self.kind, v, self.fwd[v], nt, pos, int(self.heading[v]), ev.code, t, self.rng, self.cfg.protocol
        )
        others = np.array([u for u in range(self.n) if u != v], dtype=np.int64)
        self.trace.originations[msg.key] = Origination(
            msg.key, t, v, pos.x, msg.code, others, np.abs(xs[others] - pos.x)
        )
        detail = f"cid={plan.candidate_id} minb={msg.min_b} maxb={msg.max_b} rear={plan.rear_count}"
        self.trace.log(t, "DangerDetect", v, msg.sender_id, msg.msg_id, detail, pos.x)
        prio = classify(msg.code).priority_class
        self._submit(v, Frame("emergency", prio, self.cfg.mac.cw_min, msg, 0, False), t)


def run(config: ScenarioConfig, seed: int, **kwargs) -> EventTrace:
    """Simulate ``config`` with ``seed`` and return the event trace."""
    return Simulation(config, seed, **kwargs).run()
