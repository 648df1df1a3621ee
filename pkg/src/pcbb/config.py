"""Scenario configuration and the ``key = value`` config-file format.

One setting per line, ``#`` starts a comment, keys are dotted section
names (``channel.m = 3``). Lists are comma separated; a danger schedule
entry is ``t_ms:code:origin_x_m``. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional

from .beaconing import BeaconParams
from .channel import ChannelParams
from .core import classify
from .forwarding import PsoParams
from .mac import MacParams
from .protocols import ProtocolKind, ProtocolParams


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        self.line = line
        self.key = key
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


@dataclass(frozen=True)
class DangerEvent:
    t_ms: float
    code: int = 1
    origin_x_m: float = 1900.0

    @property
    def t_us(self) -> int:
        return int(round(self.t_ms * 1000))


def default_danger_schedule(duration_s: float = 10.0) -> tuple[DangerEvent, ...]:
    return tuple(DangerEvent(1000.0 * k, 1, 1900.0) for k in range(1, int(duration_s)))


@dataclass(frozen=True)
class ScenarioConfig:
    vehicles: int = 200
    road_length_m: float = 2000.0
    lanes: int = 3
    speed_min_kmh: float = 20.0
    speed_max_kmh: float = 120.0
    duration_s: float = 10.0
    message_bytes: int = 512
    neighbor_entry_bytes: int = 15
    min_headway_m: float = 5.0
    bidirectional: bool = False
    channel: ChannelParams = ChannelParams()
    mac: MacParams = MacParams()
    beacon: BeaconParams = BeaconParams()
    protocol: ProtocolParams = ProtocolParams()
    danger_schedule: tuple[DangerEvent, ...] = field(default_factory=default_danger_schedule)

    @property
    def horizon_us(self) -> int:
        return int(round(self.duration_s * 1e6))

    def validate(self) -> None:
        if self.vehicles < 1:
            raise ConfigError("scenario.vehicles must be >= 1", key="scenario.vehicles")
        if self.road_length_m <= 0:
            raise ConfigError("scenario.road_length_m must be positive", key="scenario.road_length_m")
        if self.lanes < 1:
            raise ConfigError("scenario.lanes must be >= 1", key="scenario.lanes")
        if not 0 < self.speed_min_kmh <= self.speed_max_kmh:
            raise ConfigError("need 0 < speed_min_kmh <= speed_max_kmh", key="scenario.speed_min_kmh")
        if self.duration_s <= 0:
            raise ConfigError("scenario.duration_s must be positive", key="scenario.duration_s")
        if self.message_bytes <= 0:
            raise ConfigError("scenario.message_bytes must be positive", key="scenario.message_bytes")
        if self.protocol.hop_cap < 0 or self.protocol.n_max < 1:
            raise ConfigError("protocol.hop_cap >= 0 and pcbb.n_max >= 1 required")
        for ev in self.danger_schedule:
            if ev.t_ms < 0 or ev.t_us >= self.horizon_us:
                raise ConfigError(f"danger event at {ev.t_ms} ms is outside the run", key="protocol.danger_schedule")

    def behaviour_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["protocol"].pop("kind")
        return json.loads(json.dumps(d, default=str))

    def scenario_hash(self) -> str:
        """Hash of every setting that affects simulation behaviour except the
        protocol kind, so runs of different protocols stay comparable."""
        blob = json.dumps(self.behaviour_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig
    protocols: tuple[ProtocolKind, ...]
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    output_dir: str = "results"

    def for_protocol(self, kind: ProtocolKind) -> ScenarioConfig:
        return dataclasses.replace(
            self.scenario, protocol=dataclasses.replace(self.scenario.protocol, kind=kind)
        )


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _pair(s: str) -> tuple[float, float]:
    parts = [float(p) for p in s.split(",")]
    if len(parts) != 2 or parts[0] > parts[1]:
        raise ValueError(f"expected 'lo, hi', got {s!r}")
    return (parts[0], parts[1])


def parse_kinds(s: str) -> tuple[ProtocolKind, ...]:
    kinds = tuple(ProtocolKind(p.strip().lower()) for p in s.split(",") if p.strip())
    if not kinds:
        raise ValueError("no protocol given")
    return kinds


def parse_seeds(s: str) -> tuple[int, ...]:
    out = []
    for part in s.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ValueError("no seeds given")
    return tuple(out)


def _schedule(s: str) -> tuple[DangerEvent, ...]:
    events = []
    for item in s.split(","):
        item = item.strip()
        if not item:
            continue
        t, code, x = item.split(":")
        events.append(DangerEvent(float(t), classify(int(code)).code, float(x)))
    return tuple(events)


# key -> (section, field, parser)
_KEYS: dict[str, tuple[str, str, Callable[[str], Any]]] = {
    "scenario.vehicles": ("", "vehicles", int),
    "scenario.road_length_m": ("", "road_length_m", float),
    "scenario.lanes": ("", "lanes", int),
    "scenario.speed_min_kmh": ("", "speed_min_kmh", float),
    "scenario.speed_max_kmh": ("", "speed_max_kmh", float),
    "scenario.duration_s": ("", "duration_s", float),
    "scenario.message_bytes": ("", "message_bytes", int),
    "scenario.neighbor_entry_bytes": ("", "neighbor_entry_bytes", int),
    "mobility.min_headway_m": ("", "min_headway_m", float),
    "mobility.bidirectional": ("", "bidirectional", _bool),
    "channel.m": ("channel", "m", int),
    "channel.path_loss_exponent": ("channel", "path_loss_exponent", float),
    "channel.tx_power_dbm": ("channel", "tx_power_dbm", float),
    "channel.noise_floor_dbm": ("channel", "noise_floor_dbm", float),
    "channel.snr_threshold_db": ("channel", "snr_threshold_db", float),
    "channel.range_m": ("channel", "range_m", float),
    "channel.capture_db": ("channel", "capture_db", float),
    "channel.cs_margin_db": ("channel", "cs_margin_db", float),
    "mac.slot_us": ("mac", "slot_us", int),
    "mac.sifs_us": ("mac", "sifs_us", int),
    "mac.difs_us": ("mac", "difs_us", int),
    "mac.cw_min": ("mac", "cw_min", int),
    "mac.cw_max": ("mac", "cw_max", int),
    "mac.data_rate_bps": ("mac", "data_rate_bps", int),
    "mac.plcp_us": ("mac", "plcp_us", int),
    "mac.symbol_us": ("mac", "symbol_us", int),
    "mac.cw_in_slots": ("mac", "cw_in_slots", _bool),
    "beacon.rate_hz": ("beacon", "rate_hz", float),
    "beacon.ttl_ms": ("beacon", "ttl_ms", float),
    "pcbb.n_max": ("protocol", "n_max", int),
    "pcbb.w_range": ("pso", "w_range", _pair),
    "pcbb.c1": ("pso", "c1", float),
    "pcbb.c2": ("pso", "c2", float),
    "pcbb.rand_range": ("pso", "rand_range", _pair),
    "protocol.hop_cap": ("protocol", "hop_cap", int),
    "protocol.first_forwarder_cw": ("protocol", "first_forwarder_cw", int),
    "protocol.danger_schedule": ("", "danger_schedule", _schedule),
    "protocol.kind": ("run", "protocols", parse_kinds),
    "run.seeds": ("run", "seeds", parse_seeds),
    "run.output_dir": ("run", "output_dir", str),
}
KNOWN_KEYS = tuple(_KEYS)


def parse_lines(lines, *, require: tuple[str, ...] = ("protocol.kind",)) -> dict[str, tuple[Any, int]]:
    """Parse config lines into ``{key: (value, line_no)}``."""
    found: dict[str, tuple[Any, int]] = {}
    for no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", no)
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}", no, key)
        if key in found:
            raise ConfigError(f"duplicate key {key!r} (first on line {found[key][1]})", no, key)
        try:
            found[key] = (_KEYS[key][2](value), no)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}", no, key) from exc
    for key in require:
        if key not in found:
            raise ConfigError(f"missing required key {key!r}", key=key)
    return found


def build(values: dict[str, tuple[Any, int]]) -> ExperimentConfig:
    sections: dict[str, dict[str, Any]] = {s: {} for s in ("", "channel", "mac", "beacon", "protocol", "pso", "run")}
    for key, (value, _) in values.items():
        section, name, _ = _KEYS[key]
        sections[section][name] = value

    def make(cls, kwargs, prefix):
        try:
            return cls(**kwargs)
        except ValueError as exc:
            lines = [values[k][1] for k in values if k.startswith(prefix)]
            raise ConfigError(str(exc), min(lines) if lines else None) from exc

    pso = make(PsoParams, sections["pso"], "pcbb.")
    protocol = ProtocolParams(pso=pso, **sections["protocol"])
    top = dict(sections[""])
    if "danger_schedule" not in top:
        top["danger_schedule"] = default_danger_schedule(top.get("duration_s", 10.0))
    scenario = ScenarioConfig(
        channel=make(ChannelParams, sections["channel"], "channel."),
        mac=make(MacParams, sections["mac"], "mac."),
        beacon=make(BeaconParams, sections["beacon"], "beacon."),
        protocol=protocol,
        **top,
    )
    try:
        scenario.validate()
    except ConfigError as exc:
        line = values.get(exc.key, (None, None))[1] if exc.key else None
        raise ConfigError(str(exc), line, exc.key) from exc
    run = sections["run"]
    return ExperimentConfig(
        scenario=scenario,
        protocols=run.get("protocols", tuple(ProtocolKind)),
        seeds=run.get("seeds", (1, 2, 3, 4, 5)),
        output_dir=run.get("output_dir", "results"),
    )


def load_config(path, **kwargs) -> ExperimentConfig:
    text = Path(path).read_text()
    return build(parse_lines(text.splitlines(), **kwargs))


def loads(text: str, **kwargs) -> ExperimentConfig:
    return build(parse_lines(text.splitlines(), **kwargs))
