"""Domain types shared across the simulator.

Times are integer microseconds, positions are metres along the road axis.
Emergency messages have a fixed 512-byte little-endian wire layout:

    offset  size  field
    0       4     sender_id     u32
    4       1     code          u8
    5       8     timestamp     u64 (us)
    13      4     msg_id        u32
    17      4     candidate_id  u32, 0xFFFFFFFF = absent
    21      4     min_b         f32 metres, NaN = absent
    25      4     max_b         f32 metres, NaN = absent
    29      483   data          zero padded
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

MESSAGE_SIZE = 512
HEADER = struct.Struct("<IBQIIff")
PAYLOAD_SIZE = MESSAGE_SIZE - HEADER.size
ABSENT_ID = 0xFFFFFFFF

NEIGHBOR_ENTRY = struct.Struct("<IfBbH3s")
NEIGHBOR_ENTRY_SIZE = NEIGHBOR_ENTRY.size
_LBEST_ABSENT = 0xFFFFFF

SimTime = int
VehicleId = int


class FormatError(ValueError):
    """Raised when a wire record cannot be decoded."""


class PriorityClass(enum.IntEnum):
    # lower value is processed first
    SAFETY_OF_LIFE = 0
    SAFETY = 1
    NON_SAFETY = 2


_CODES = {
    1: (PriorityClass.SAFETY_OF_LIFE, "Emergency Break Warning/Avoidance"),
    2: (PriorityClass.SAFETY_OF_LIFE, "Cooperative Collision Warning"),
    3: (PriorityClass.SAFETY, "Intersection warning"),
    4: (PriorityClass.SAFETY, "Transit Vehicle Signal Priority"),
    5: (PriorityClass.NON_SAFETY, "Toll Collection"),
    6: (PriorityClass.NON_SAFETY, "Service Announcement"),
    7: (PriorityClass.NON_SAFETY, "Movie Download"),
}


@dataclass(frozen=True)
class MessageCode:
    code: int
    priority_class: PriorityClass
    application: str = ""

    @property
    def life_critical(self) -> bool:
        return self.priority_class is PriorityClass.SAFETY_OF_LIFE


def classify(code: int) -> MessageCode:
    """Map a message code 1-7 to its priority class."""
    if isinstance(code, bool) or not isinstance(code, (int, np.integer)):
        raise ValueError(f"message code must be an integer, got {code!r}")
    code = int(code)
    if code not in _CODES:
        raise ValueError(f"message code {code} outside 1-7")
    cls, app = _CODES[code]
    return MessageCode(code, cls, app)


def processing_order(messages):
    """Sort messages so higher-priority codes are handled first (stable)."""
    return sorted(messages, key=lambda m: classify(m.code).priority_class)


@dataclass(frozen=True)
class Position:
    x: float
    lane: int = 1


def distance(sen_pos: Position, for_pos: Position) -> float:
    """Longitudinal separation between two positions; lanes are ignored."""
    return abs(sen_pos.x - for_pos.x)


def _f32(v: Optional[float]) -> Optional[float]:
    if v is None:
        return None
    return float(np.float32(v))


@dataclass(frozen=True)
class EmergencyMessage:
    sender_id: int
    code: int
    timestamp: int
    msg_id: int
    data: bytes = b""
    candidate_id: Optional[int] = None
    min_b: Optional[float] = None
    max_b: Optional[float] = None

    def __post_init__(self):
        classify(self.code)
        for name in ("sender_id", "msg_id"):
            v = getattr(self, name)
            if not 0 <= v < ABSENT_ID + 1:
                raise ValueError(f"{name}={v} does not fit in u32")
        if self.candidate_id is not None and not 0 <= self.candidate_id < ABSENT_ID:
            raise ValueError(f"candidate_id={self.candidate_id} out of range")
        if not 0 <= self.timestamp < 2**64:
            raise ValueError(f"timestamp={self.timestamp} does not fit in u64")
        if len(self.data) > PAYLOAD_SIZE:
            raise ValueError(f"payload of {len(self.data)} bytes exceeds {PAYLOAD_SIZE}")
        # normalise to the wire representation so decode(encode(m)) == m
        object.__setattr__(self, "data", bytes(self.data).ljust(PAYLOAD_SIZE, b"\0"))
        object.__setattr__(self, "min_b", _f32(self.min_b))
        object.__setattr__(self, "max_b", _f32(self.max_b))
        if (self.min_b is None) != (self.max_b is None):
            raise ValueError("min_b and max_b must be both present or both absent")
        if self.min_b is not None and not 0 <= self.min_b < self.max_b:
            raise ValueError(f"need 0 <= min_b < max_b, got {self.min_b}, {self.max_b}")

    @property
    def key(self) -> tuple[int, int]:
        return (self.sender_id, self.msg_id)

    @property
    def has_boundaries(self) -> bool:
        return self.min_b is not None


def encode(msg: EmergencyMessage) -> bytes:
    nan = float("nan")
    header = HEADER.pack(
        msg.sender_id,
        msg.code,
        msg.timestamp,
        msg.msg_id,
        ABSENT_ID if msg.candidate_id is None else msg.candidate_id,
        nan if msg.min_b is None else msg.min_b,
        nan if msg.max_b is None else msg.max_b,
    )
    return header + msg.data


def decode(record: bytes) -> EmergencyMessage:
    if len(record) != MESSAGE_SIZE:
        raise FormatError(f"expected {MESSAGE_SIZE} bytes, got {len(record)}")
    sender, code, ts, msg_id, cid, min_b, max_b = HEADER.unpack_from(record)
    try:
        return EmergencyMessage(
            sender_id=sender,
            code=code,
            timestamp=ts,
            msg_id=msg_id,
            data=record[HEADER.size:],
            candidate_id=None if cid == ABSENT_ID else cid,
            min_b=None if math.isnan(min_b) else min_b,
            max_b=None if math.isnan(max_b) else max_b,
        )
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


@dataclass(frozen=True)
class Beacon:
    sender_id: int
    position: Position
    speed: float
    heading: int
    timestamp: int
    piggyback_lbest: Optional[float] = None

    def encode_entry(self) -> bytes:
        """15-byte neighbour-table entry: id, x (f32), lane, heading, speed (cm/s),
        lBest (u24 decimetres, all-ones = absent)."""
        if self.piggyback_lbest is None:
            lb = _LBEST_ABSENT
        else:
            lb = min(int(round(self.piggyback_lbest * 10)), _LBEST_ABSENT - 1)
        return NEIGHBOR_ENTRY.pack(
            self.sender_id,
            self.position.x,
            self.position.lane,
            self.heading,
            min(int(round(self.speed * 100)), 0xFFFF),
            lb.to_bytes(3, "little"),
        )

    @classmethod
    def decode_entry(cls, raw: bytes, timestamp: int = 0) -> "Beacon":
        if len(raw) != NEIGHBOR_ENTRY_SIZE:
            raise FormatError(f"expected {NEIGHBOR_ENTRY_SIZE} bytes, got {len(raw)}")
        sid, x, lane, heading, speed, lb = NEIGHBOR_ENTRY.unpack(raw)
        lb = int.from_bytes(lb, "little")
        return cls(
            sender_id=sid,
            position=Position(x, lane),
            speed=speed / 100,
            heading=heading,
            timestamp=timestamp,
            piggyback_lbest=None if lb == _LBEST_ABSENT else lb / 10,
        )


class Outcome(enum.IntEnum):
    RECEIVED = 0
    FADED = 1
    COLLIDED = 2


@dataclass
class Transmission:
    """A frame on the air. ``hop`` is a link-layer hop counter kept beside the
    512-byte record (0 for the originator)."""

    tx_id: int
    frame: bytes
    sender: int
    origin: Position
    start: int
    duration: int
    kind: str = "beacon"
    hop: int = 0
    msg_key: Optional[tuple[int, int]] = None
    beacon: Optional[Beacon] = field(default=None, repr=False)

    @property
    def end(self) -> int:
        return self.start + self.duration

    def overlaps(self, other: "Transmission") -> bool:
        return self.start < other.end and other.start < self.end
