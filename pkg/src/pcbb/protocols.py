"""PCBB, CBB and EMDV decision logic.

The functions here decide; the engine executes. A vehicle's forwarding
memory lives in ``ForwardingState``. All randomness is passed in.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .beaconing import NeighborTable, gbest_from_crnt
from .core import EmergencyMessage, Position, classify, distance
from .forwarding import (
    Boundaries,
    PsoParams,
    PsoState,
    SelectionError,
    cbb_boundaries,
    cluster_segments,
    pcbb_boundaries,
    rear_neighbors,
)


class ProtocolKind(str, enum.Enum):
    PCBB = "pcbb"
    CBB = "cbb"
    EMDV = "emdv"


class Role(enum.Enum):
    IDLE = "idle"
    CANDIDATE = "candidate"
    CONTENDER = "contender"


@dataclass(frozen=True)
class ProtocolParams:
    kind: ProtocolKind = ProtocolKind.PCBB
    hop_cap: int = 4
    n_max: int = 10
    first_forwarder_cw: int = 15
    pso: PsoParams = PsoParams()


@dataclass
class Pending:
    msg: EmergencyMessage
    fire_at: int
    hop: int  # hop index the rebroadcast would carry
    role: Role


@dataclass
class ForwardingState:
    seen: set = field(default_factory=set)
    transmitted: set = field(default_factory=set)
    heard_hop: dict = field(default_factory=dict)  # key -> highest hop of a duplicate heard
    pending: dict = field(default_factory=dict)  # key -> Pending
    pso: PsoState = field(default_factory=PsoState)
    next_msg_id: int = 0

    @property
    def lbest(self) -> Optional[float]:
        """Value piggybacked on beacons; absent until PSO has run once."""
        return self.pso.p_best if self.pso.runs else None

    def role(self, key) -> Role:
        p = self.pending.get(key)
        return p.role if p else Role.IDLE

    def suppressed(self, key, hop: int) -> bool:
        """True once a copy at ``hop`` or beyond has been heard."""
        return self.heard_hop.get(key, -1) >= hop


@dataclass(frozen=True)
class RebroadcastNow:
    hop: int
    cw: int


@dataclass(frozen=True)
class ScheduleContention:
    fire_at: int
    hop: int
    wait_us: float


@dataclass(frozen=True)
class Drop:
    reason: str


@dataclass(frozen=True)
class Rebroadcast:
    pass


@dataclass(frozen=True)
class Cancel:
    reason: str


Action = Union[RebroadcastNow, ScheduleContention, Drop]


def contention_time(dis: float, max_b: float, t_slot: float) -> float:
    """Waiting time before a segment vehicle checks for a rebroadcast;
    zero at the segment's far edge, ``100 * t_slot`` at the sender."""
    if max_b <= 0:
        raise ValueError("max_b must be positive")
    return t_slot * ((1 - dis / max_b) * 100)


@dataclass(frozen=True)
class SendPlan:
    candidate_id: Optional[int]
    candidate_dis: Optional[float]
    boundaries: Optional[Boundaries]
    rear_count: int


def plan_forwarding(
    kind: ProtocolKind,
    nt: NeighborTable,
    pos: Position,
    heading: int,
    pso_state: PsoState,
    rng: Optional[np.random.Generator],
    params: ProtocolParams = ProtocolParams(),
    *,
    draws: Optional[tuple[float, float, float]] = None,
) -> SendPlan:
    """Pick the candidate forwarder and contention segment for a send."""
    rear = rear_neighbors(nt, pos, heading)
    if not rear:
        return SendPlan(None, None, None, 0)
    cid, dis = rear[0][0].id, rear[0][1]
    if len(rear) == 1 or kind is ProtocolKind.EMDV or dis <= 0:
        return SendPlan(cid, dis, None, len(rear))
    if kind is ProtocolKind.CBB:
        return SendPlan(cid, dis, cbb_boundaries(nt, pos, params.n_max, heading), len(rear))
    pso_state.g_best = gbest_from_crnt(nt)
    try:
        pl = cluster_segments(nt, pos, heading)
        b = pcbb_boundaries(pl, pso_state, dis, rng, params.pso, draws=draws)
    except SelectionError:
        b = cbb_boundaries(nt, pos, params.n_max, heading)
    return SendPlan(cid, dis, b, len(rear))


def _with_plan(base: EmergencyMessage, plan: SendPlan) -> EmergencyMessage:
    b = plan.boundaries
    return EmergencyMessage(
        sender_id=base.sender_id,
        code=base.code,
        timestamp=base.timestamp,
        msg_id=base.msg_id,
        data=base.data,
        candidate_id=plan.candidate_id,
        min_b=None if b is None else b.min_b,
        max_b=None if b is None else b.max_b,
    )


def on_danger_detected(
    kind: ProtocolKind,
    vehicle_id: int,
    state: ForwardingState,
    nt: NeighborTable,
    pos: Position,
    heading: int,
    danger_code: int,
    t: int,
    rng: Optional[np.random.Generator],
    params: ProtocolParams = ProtocolParams(),
    *,
    data: bytes = b"",
    draws: Optional[tuple[float, float, float]] = None,
) -> tuple[EmergencyMessage, SendPlan]:
    """Originate an emergency message; the caller hands it to the MAC."""
    classify(danger_code)
    msg_id = state.next_msg_id
    state.next_msg_id += 1
    plan = plan_forwarding(kind, nt, pos, heading, state.pso, rng, params, draws=draws)
    base = EmergencyMessage(vehicle_id, danger_code, t, msg_id, data)
    msg = _with_plan(base, plan)
    state.seen.add(msg.key)
    state.transmitted.add(msg.key)
    return msg, plan


def prepare_rebroadcast(
    kind: ProtocolKind,
    received: EmergencyMessage,
    state: ForwardingState,
    nt: NeighborTable,
    pos: Position,
    heading: int,
    rng: Optional[np.random.Generator],
    params: ProtocolParams = ProtocolParams(),
) -> tuple[EmergencyMessage, SendPlan]:
    """Re-run sender logic at a forwarder: same id, code, timestamp and
    payload; candidate and boundaries recomputed from the forwarder's table."""
    plan = plan_forwarding(kind, nt, pos, heading, state.pso, rng, params)
    return _with_plan(received, plan), plan


def on_emergency_received(
    kind: ProtocolKind,
    vehicle_id: int,
    state: ForwardingState,
    msg: EmergencyMessage,
    t: int,
    self_pos: Position,
    tx_origin: Position,
    tx_hop: int = 0,
    *,
    heading: int = 1,
    t_slot: int = 16,
    params: ProtocolParams = ProtocolParams(),
) -> Action:
    key = msg.key
    if key in state.seen:
        state.heard_hop[key] = max(state.heard_hop.get(key, -1), tx_hop)
        return Drop("duplicate")
    state.seen.add(key)
    if not classify(msg.code).life_critical:
        return Drop("not life critical")
    hop = tx_hop + 1
    if hop > params.hop_cap:
        return Drop("hop cap")
    if kind is ProtocolKind.EMDV:
        return emdv_behavior(vehicle_id, state, msg, hop, params)
    if msg.candidate_id == vehicle_id:
        state.pending[key] = Pending(msg, t, hop, Role.CANDIDATE)
        return RebroadcastNow(hop, params.first_forwarder_cw)
    if msg.has_boundaries:
        dis = distance(tx_origin, self_pos)
        behind = (self_pos.x - tx_origin.x) * heading < 0
        if behind and msg.min_b <= dis <= msg.max_b:
            wait = contention_time(dis, msg.max_b, t_slot)
            fire_at = t + int(round(wait))
            state.pending[key] = Pending(msg, fire_at, hop, Role.CONTENDER)
            return ScheduleContention(fire_at, hop, wait)
    return Drop("outside segment")


def emdv_behavior(vehicle_id: int, state: ForwardingState, msg: EmergencyMessage, hop: int, params: ProtocolParams = ProtocolParams()) -> Action:
    """Only the sender's chosen farthest neighbour forwards."""
    if msg.candidate_id == vehicle_id:
        state.pending[msg.key] = Pending(msg, 0, hop, Role.CANDIDATE)
        return RebroadcastNow(hop, params.first_forwarder_cw)
    return Drop("not the forwarder")


def contention_fire(state: ForwardingState, key, busy_with_same: bool = False) -> Union[Rebroadcast, Cancel]:
    """Called when a pending forwarder is about to transmit."""
    pending = state.pending.get(key)
    if pending is None:
        return Cancel("nothing pending")
    if key in state.transmitted:
        return Cancel("already transmitted")
    if state.suppressed(key, pending.hop):
        return Cancel("rebroadcast heard")
    if busy_with_same:
        return Cancel("rebroadcast on air")
    return Rebroadcast()
