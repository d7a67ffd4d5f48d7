"""Localization messages, their wire codec, and the per-role state machines.

Handlers are pure: ``handler(state, msg, now, ...) -> (new_state, outgoing)``.
They never mutate ``state``; on error they raise and the caller keeps the old
state. ``now`` is the handling node's local clock reading in integer ticks
(see :data:`TICKS_PER_SECOND`), so timing differences taken on one clock are
exact.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Sequence

from . import geometry
from .exceptions import DecodeError, ProtocolOrderError, RoutingError, TimingError
from .geometry import Point, PropagationConstants

TICKS_PER_SECOND = 10**18


def seconds(ticks: int) -> float:
    return ticks / TICKS_PER_SECOND


def to_ticks(value_s: float) -> int:
    return round(value_s * TICKS_PER_SECOND)


class Scenario(str, enum.Enum):
    DDBA = "ddba"
    CDBA = "cdba"


class MessageType(enum.IntEnum):
    HELLO = 1
    HELLO_BSC = 2
    TRACK_M = 3
    RETRACK_M = 4
    INTERMEDIATE_TRACK_M = 5
    TRACKS_M = 6
    RETRACKS_M = 7


# wire order of the optional fields and their struct codes
OPTIONAL_FIELDS = (
    ("master_id", "I"),
    ("master_timestamp", "d"),
    ("slave_id", "I"),
    ("s_slave_id", "I"),
    ("flag", "B"),
    ("bsc_id", "I"),
)
_HEADER = struct.Struct("<BHIH")
_BITMAP = struct.Struct("<B")
_FIELD_STRUCTS = {name: struct.Struct("<" + code) for name, code in OPTIONAL_FIELDS}
_FIELD_NAMES = tuple(name for name, _ in OPTIONAL_FIELDS)

_DDBA_SLAVE = frozenset({"master_id", "slave_id"})
_CDBA_MASTER = frozenset({"s_slave_id", "flag", "bsc_id"})
_CDBA_SLAVE = _CDBA_MASTER | {"slave_id"}

# None marks a message type that does not exist in the scenario
FIELD_MATRIX: dict[Scenario, dict[MessageType, frozenset | None]] = {
    Scenario.DDBA: {
        MessageType.HELLO: frozenset(),
        MessageType.HELLO_BSC: None,
        MessageType.TRACK_M: frozenset({"master_id", "master_timestamp"}),
        MessageType.RETRACK_M: frozenset({"master_id"}),
        MessageType.INTERMEDIATE_TRACK_M: _DDBA_SLAVE,
        MessageType.TRACKS_M: _DDBA_SLAVE,
        MessageType.RETRACKS_M: _DDBA_SLAVE,
    },
    Scenario.CDBA: {
        MessageType.HELLO: frozenset(),
        MessageType.HELLO_BSC: frozenset({"s_slave_id"}),
        MessageType.TRACK_M: _CDBA_MASTER,
        MessageType.RETRACK_M: _CDBA_MASTER,
        MessageType.INTERMEDIATE_TRACK_M: _CDBA_SLAVE,
        MessageType.TRACKS_M: _CDBA_SLAVE,
        MessageType.RETRACKS_M: _CDBA_SLAVE,
    },
}

_U32 = 2**32


@dataclass(frozen=True)
class Message:
    msg_type: MessageType
    mobile_id: int
    data: bytes = b""
    master_id: int | None = None
    master_timestamp: float | None = None
    slave_id: int | None = None
    s_slave_id: int | None = None
    flag: int | None = None
    bsc_id: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "msg_type", MessageType(self.msg_type))
        object.__setattr__(self, "data", bytes(self.data))
        if not 0 <= self.mobile_id < _U32:
            raise ValueError(f"mobile_id out of range: {self.mobile_id}")
        if len(self.data) > 0xFFFF:
            raise ValueError("data payload longer than 65535 bytes")
        for name in ("master_id", "slave_id", "s_slave_id", "bsc_id"):
            value = getattr(self, name)
            if value is not None and not 0 <= value < _U32:
                raise ValueError(f"{name} out of range: {value}")
        if self.flag is not None and not 0 <= self.flag <= 0xFF:
            raise ValueError(f"flag out of range: {self.flag}")
        if self.master_timestamp is not None and not math.isfinite(self.master_timestamp):
            raise ValueError("master_timestamp must be finite")

    def present_fields(self) -> frozenset:
        return frozenset(n for n in _FIELD_NAMES if getattr(self, n) is not None)

    @property
    def msg_length(self) -> int:
        """Size of the encoded frame in bytes, header included."""
        return (_HEADER.size + len(self.data) + _BITMAP.size
                + sum(_FIELD_STRUCTS[n].size for n in self.present_fields()))

    @property
    def scenario(self) -> Scenario | None:
        """Scenario whose field set this message matches; None if ambiguous or none."""
        matches = [s for s in Scenario if FIELD_MATRIX[s][self.msg_type] == self.present_fields()]
        return matches[0] if len(matches) == 1 else None


def required_fields(scenario: Scenario, msg_type: MessageType) -> frozenset:
    fields = FIELD_MATRIX[Scenario(scenario)][MessageType(msg_type)]
    if fields is None:
        raise ValueError(f"{MessageType(msg_type).name} does not exist in {scenario.value}")
    return fields


def check_fields(msg: Message, scenario: Scenario | None = None) -> None:
    """Raise :class:`DecodeError` unless ``msg`` carries exactly the allowed fields."""
    present = msg.present_fields()
    scenarios = [Scenario(scenario)] if scenario is not None else list(Scenario)
    for s in scenarios:
        if FIELD_MATRIX[s][msg.msg_type] == present:
            return
    where = scenario.value if scenario is not None else "any scenario"
    raise DecodeError(
        f"{msg.msg_type.name} with fields {sorted(present)} is not valid in {where}")


def encode_message(msg: Message) -> bytes:
    check_fields(msg)
    present = msg.present_fields()
    bitmap = 0
    tail = []
    for bit, name in enumerate(_FIELD_NAMES):
        if name in present:
            bitmap |= 1 << bit
            tail.append(_FIELD_STRUCTS[name].pack(getattr(msg, name)))
    out = b"".join([
        _HEADER.pack(msg.msg_type, msg.msg_length, msg.mobile_id, len(msg.data)),
        msg.data,
        _BITMAP.pack(bitmap),
        *tail,
    ])
    assert len(out) == msg.msg_length
    return out


def decode_message(buf: bytes) -> Message:
    buf = bytes(buf)
    if len(buf) < _HEADER.size:
        raise DecodeError(f"truncated header: {len(buf)} bytes")
    tag, length, mobile_id, data_len = _HEADER.unpack_from(buf)
    try:
        msg_type = MessageType(tag)
    except ValueError:
        raise DecodeError(f"unknown msg_type tag {tag}") from None
    if length != len(buf):
        raise DecodeError(f"msg_length {length} does not match frame size {len(buf)}")
    offset = _HEADER.size
    if offset + data_len + _BITMAP.size > len(buf):
        raise DecodeError("truncated data payload")
    data = buf[offset:offset + data_len]
    offset += data_len
    (bitmap,) = _BITMAP.unpack_from(buf, offset)
    offset += _BITMAP.size
    if bitmap >> len(_FIELD_NAMES):
        raise DecodeError(f"unknown bits in presence bitmap 0x{bitmap:02x}")
    values = {}
    for bit, name in enumerate(_FIELD_NAMES):
        if bitmap & (1 << bit):
            st = _FIELD_STRUCTS[name]
            if offset + st.size > len(buf):
                raise DecodeError(f"truncated field {name}")
            (values[name],) = st.unpack_from(buf, offset)
            offset += st.size
    if offset != len(buf):
        raise DecodeError(f"{len(buf) - offset} trailing bytes")
    try:
        msg = Message(msg_type, mobile_id, data, **values)
    except ValueError as exc:
        raise DecodeError(str(exc)) from None
    check_fields(msg)
    return msg


class Node(NamedTuple):
    """Network address of a simulated node."""

    kind: str
    id: int

    def __str__(self):
        return f"{self.kind}:{self.id}"


def mobile_node(i: int) -> Node:
    return Node("mobile", i)


def bts_node(i: int) -> Node:
    return Node("bts", i)


def bsc_node(i: int) -> Node:
    return Node("bsc", i)


class Outgoing(NamedTuple):
    """A logical message to send. ``via`` lists transparent relay hops."""

    message: Message
    to: Node
    via: tuple[Node, ...] = ()


class Phase(enum.Enum):
    IDLE = "idle"
    AWAIT_RETRACK = "await-retrack"
    AWAIT_SLAVE_RETRACK = "await-slave-retrack"
    DONE = "done"


@dataclass(frozen=True)
class TimingLedger:
    """One closed measurement phase on the measuring node's clock (ticks)."""

    count: int
    t1: int
    t2: int

    def __post_init__(self):
        if self.count not in (1, 2, 3):
            raise ValueError(f"ledger count must be 1, 2 or 3, got {self.count}")
        if self.t2 < self.t1:
            raise TimingError(f"phase {self.count} ends before it starts")

    @property
    def time_diff_ticks(self) -> int:
        return self.t2 - self.t1

    @property
    def time_diff(self) -> float:
        return seconds(self.t2 - self.t1)


def make_hello(mobile_id: int, data: bytes = b"") -> Message:
    return Message(MessageType.HELLO, mobile_id, data)


# -- mobile -----------------------------------------------------------------

@dataclass(frozen=True)
class MobileIdle:
    mobile_id: int


def handle_mobile(state: MobileIdle, msg: Message, now: int):
    if msg.mobile_id != state.mobile_id:
        return state, []
    if msg.msg_type not in (MessageType.TRACK_M, MessageType.TRACKS_M):
        raise ProtocolOrderError(f"mobile {state.mobile_id} cannot handle {msg.msg_type.name}")
    check_fields(msg)
    slave_phase = msg.msg_type is MessageType.TRACKS_M
    reply_type = MessageType.RETRACKS_M if slave_phase else MessageType.RETRACK_M
    if msg.bsc_id is None:
        # DDBA: every reply closes a loop at the master
        reply = Message(reply_type, msg.mobile_id, msg.data, master_id=msg.master_id,
                        slave_id=msg.slave_id)
        return state, [Outgoing(reply, bts_node(msg.master_id))]
    relay = msg.slave_id if slave_phase else msg.s_slave_id
    reply = Message(reply_type, msg.mobile_id, msg.data, slave_id=msg.slave_id,
                    s_slave_id=msg.s_slave_id, flag=msg.flag, bsc_id=msg.bsc_id)
    return state, [Outgoing(reply, bsc_node(msg.bsc_id), via=(bts_node(relay),))]


# -- slave BTS (both scenarios) ---------------------------------------------

@dataclass(frozen=True)
class SlaveIdle:
    bts_id: int


def handle_slave_bts(state: SlaveIdle, msg: Message, now: int):
    if msg.msg_type is not MessageType.INTERMEDIATE_TRACK_M:
        raise ProtocolOrderError(f"slave {state.bts_id} cannot handle {msg.msg_type.name}")
    check_fields(msg)
    if msg.slave_id != state.bts_id:
        return state, []
    tracks = replace(msg, msg_type=MessageType.TRACKS_M)
    return state, [Outgoing(tracks, mobile_node(msg.mobile_id))]


# -- serving BTS in CDBA ----------------------------------------------------

@dataclass(frozen=True)
class CdbaBtsIdle:
    bts_id: int
    bsc_id: int


def handle_cdba_bts(state: CdbaBtsIdle, msg: Message, now: int):
    """A CDBA base station: forwards Hello upward, TrackM downward, acts as slave."""
    if msg.msg_type is MessageType.HELLO:
        check_fields(msg, Scenario.CDBA)
        up = Message(MessageType.HELLO_BSC, msg.mobile_id, msg.data, s_slave_id=state.bts_id)
        return state, [Outgoing(up, bsc_node(state.bsc_id))]
    if msg.msg_type is MessageType.TRACK_M:
        check_fields(msg, Scenario.CDBA)
        if msg.s_slave_id != state.bts_id or msg.bsc_id != state.bsc_id:
            raise RoutingError(f"BTS {state.bts_id} got TrackM addressed to "
                               f"BTS {msg.s_slave_id} of BSC {msg.bsc_id}")
        return state, [Outgoing(msg, mobile_node(msg.mobile_id))]
    if msg.msg_type is MessageType.INTERMEDIATE_TRACK_M:
        check_fields(msg, Scenario.CDBA)
        _, out = handle_slave_bts(SlaveIdle(state.bts_id), msg, now)
        return state, out
    raise ProtocolOrderError(f"BTS {state.bts_id} cannot handle {msg.msg_type.name}")


# -- measuring nodes --------------------------------------------------------

@dataclass(frozen=True)
class MasterState:
    """DDBA serving BTS. ``slaves`` holds (bts_id, position) pairs in phase order."""

    bts_id: int
    position: Point
    phase: Phase = Phase.IDLE
    slave_index: int = 0
    mobile_id: int | None = None
    data: bytes = b""
    slaves: tuple[tuple[int, Point], ...] = ()
    t1: int | None = None
    samples: tuple[TimingLedger, ...] = field(default=())

    @property
    def centers(self) -> tuple[Point, Point, Point]:
        return (self.position, self.slaves[0][1], self.slaves[1][1])

    def known_distances(self) -> tuple[float, float]:
        """Master-to-slave distances (d01, d02)."""
        return tuple(geometry.euclidean_distance(self.position, p) for _, p in self.slaves)


def _unexpected(who: str, state, msg: Message):
    return ProtocolOrderError(
        f"{who} in phase {state.phase.value} cannot handle {msg.msg_type.name}")


def handle_master_bts(state: MasterState, msg: Message, now: int,
                      db: Mapping[int, Point]):
    """DDBA master. ``db`` is this station's neighbor table (id -> position)."""
    who = f"master {state.bts_id}"
    kind = msg.msg_type
    if kind is MessageType.HELLO and state.phase is Phase.IDLE:
        check_fields(msg, Scenario.DDBA)
        picked = geometry.choose_slaves(state.bts_id, state.position, db.items())
        track = Message(MessageType.TRACK_M, msg.mobile_id, msg.data,
                        master_id=state.bts_id, master_timestamp=seconds(now))
        new = replace(state, phase=Phase.AWAIT_RETRACK, mobile_id=msg.mobile_id,
                      data=msg.data, slaves=tuple((i, db[i]) for i in picked), t1=now)
        return new, [Outgoing(track, mobile_node(msg.mobile_id))]

    if kind is MessageType.RETRACK_M and state.phase is Phase.AWAIT_RETRACK:
        check_fields(msg, Scenario.DDBA)
        _check_mobile(who, state, msg)
        if msg.master_id != state.bts_id:
            raise RoutingError(f"{who} got RetrackM for master {msg.master_id}")
        sample = TimingLedger(1, state.t1, now)
        return _start_slave_phase(state, 1, sample, now)

    if kind is MessageType.RETRACKS_M and state.phase is Phase.AWAIT_SLAVE_RETRACK:
        check_fields(msg, Scenario.DDBA)
        _check_mobile(who, state, msg)
        if msg.master_id != state.bts_id:
            raise RoutingError(f"{who} got RetracksM for master {msg.master_id}")
        _check_slave(who, state, msg.slave_id)
        sample = TimingLedger(state.slave_index + 1, state.t1, now)
        if state.slave_index == 1:
            return _start_slave_phase(state, 2, sample, now)
        return replace(state, phase=Phase.DONE, t1=None,
                       samples=state.samples + (sample,)), []

    raise _unexpected(who, state, msg)


def _check_mobile(who: str, state, msg: Message) -> None:
    if msg.mobile_id != state.mobile_id:
        raise RoutingError(f"{who} is tracking mobile {state.mobile_id}, "
                           f"got {msg.msg_type.name} from mobile {msg.mobile_id}")


def _check_slave(who: str, state, slave_id: int) -> None:
    ids = [i for i, _ in state.slaves]
    if slave_id not in ids:
        raise RoutingError(f"{who}: unknown slave {slave_id}")
    if slave_id != ids[state.slave_index - 1]:
        raise ProtocolOrderError(
            f"{who} awaits slave {ids[state.slave_index - 1]}, got slave {slave_id}")


def _start_slave_phase(state: MasterState, index: int, sample: TimingLedger, now: int):
    slave_id = state.slaves[index - 1][0]
    inter = Message(MessageType.INTERMEDIATE_TRACK_M, state.mobile_id, state.data,
                    master_id=state.bts_id, slave_id=slave_id)
    new = replace(state, phase=Phase.AWAIT_SLAVE_RETRACK, slave_index=index, t1=now,
                  samples=state.samples + (sample,))
    return new, [Outgoing(inter, bts_node(slave_id))]


@dataclass(frozen=True)
class BscState:
    """CDBA controller. ``serving`` and ``slaves`` are (bts_id, position) pairs."""

    bsc_id: int
    position: Point
    phase: Phase = Phase.IDLE
    slave_index: int = 0
    mobile_id: int | None = None
    data: bytes = b""
    serving: tuple[int, Point] | None = None
    slaves: tuple[tuple[int, Point], ...] = ()
    t1: int | None = None
    samples: tuple[TimingLedger, ...] = ()

    @property
    def centers(self) -> tuple[Point, Point, Point]:
        return (self.serving[1], self.slaves[0][1], self.slaves[1][1])

    def known_distances(self) -> tuple[float, float, float]:
        """BSC-to-BTS distances for the serving station and both slaves."""
        return tuple(geometry.euclidean_distance(self.position, p) for p in self.centers)


def handle_bsc(state: BscState, msg: Message, now: int, db: Mapping[int, Point]):
    """CDBA controller. ``db`` maps every member BTS id to its position."""
    who = f"BSC {state.bsc_id}"
    kind = msg.msg_type
    if kind is MessageType.HELLO_BSC and state.phase is Phase.IDLE:
        check_fields(msg, Scenario.CDBA)
        serving = msg.s_slave_id
        if serving not in db:
            raise RoutingError(f"{who} has no BTS {serving} in its database")
        picked = geometry.choose_slaves(serving, db[serving], db.items())
        track = Message(MessageType.TRACK_M, msg.mobile_id, msg.data,
                        s_slave_id=serving, flag=0, bsc_id=state.bsc_id)
        new = replace(state, phase=Phase.AWAIT_RETRACK, mobile_id=msg.mobile_id,
                      data=msg.data, serving=(serving, db[serving]),
                      slaves=tuple((i, db[i]) for i in picked), t1=now)
        return new, [Outgoing(track, bts_node(serving))]

    if kind in (MessageType.RETRACK_M, MessageType.RETRACKS_M):
        check_fields(msg, Scenario.CDBA)
        if msg.bsc_id != state.bsc_id:
            raise RoutingError(f"{who} got {kind.name} for BSC {msg.bsc_id}")
        if msg.s_slave_id not in db or (msg.slave_id is not None and msg.slave_id not in db):
            raise RoutingError(f"{who} got {kind.name} via a BTS outside its database")

    if kind is MessageType.RETRACK_M and state.phase is Phase.AWAIT_RETRACK:
        _check_mobile(who, state, msg)
        if msg.s_slave_id != state.serving[0] or msg.flag != 0:
            raise RoutingError(f"{who} got RetrackM for serving BTS {msg.s_slave_id} "
                               f"flag {msg.flag}")
        sample = TimingLedger(1, state.t1, now)
        return _bsc_slave_phase(state, 1, sample, now)

    if kind is MessageType.RETRACKS_M and state.phase is Phase.AWAIT_SLAVE_RETRACK:
        _check_mobile(who, state, msg)
        _check_slave(who, state, msg.slave_id)
        if msg.flag != state.slave_index:
            raise ProtocolOrderError(
                f"{who} awaits flag {state.slave_index}, got flag {msg.flag}")
        sample = TimingLedger(state.slave_index + 1, state.t1, now)
        if state.slave_index == 1:
            return _bsc_slave_phase(state, 2, sample, now)
        return replace(state, phase=Phase.DONE, t1=None,
                       samples=state.samples + (sample,)), []

    raise _unexpected(who, state, msg)


def _bsc_slave_phase(state: BscState, index: int, sample: TimingLedger, now: int):
    slave_id = state.slaves[index - 1][0]
    inter = Message(MessageType.INTERMEDIATE_TRACK_M, state.mobile_id, state.data,
                    slave_id=slave_id, s_slave_id=state.serving[0], flag=index,
                    bsc_id=state.bsc_id)
    new = replace(state, phase=Phase.AWAIT_SLAVE_RETRACK, slave_index=index, t1=now,
                  samples=state.samples + (sample,))
    return new, [Outgoing(inter, bts_node(slave_id))]


# physical hops per measurement loop, used to remove configured per-hop delay
LOOP_HOPS = {Scenario.DDBA: (2, 3, 3), Scenario.CDBA: (4, 4, 4)}


def compute_distances(samples: Sequence[TimingLedger], known: Sequence[float],
                      consts: PropagationConstants, scenario: Scenario, *,
                      eq9_literal: bool = False,
                      processing_delay: float = 0.0) -> tuple[float, float, float]:
    """Turn three closed timing phases into the radii (d1, d2, d3).

    ``known`` is (d01, d02) for DDBA, the master-to-slave distances, and
    (D0, D1, D2) for CDBA, the BSC-to-BTS distances. ``processing_delay`` is
    the per-hop turnaround the measuring node subtracts before inverting.
    """
    scenario = Scenario(scenario)
    if [s.count for s in samples] != [1, 2, 3]:
        raise ValueError(
            f"need exactly three closed phases, got counts {[s.count for s in samples]}")
    hops = LOOP_HOPS[scenario]
    dts = [s.time_diff - h * processing_delay for s, h in zip(samples, hops)]
    if scenario is Scenario.DDBA:
        if len(known) != 2:
            raise ValueError("DDBA needs the two master-to-slave distances")
        d1 = geometry.master_distance_from_roundtrip(dts[0], consts)
        d2 = geometry.slave_distance_from_loop(dts[1], consts, known[0], d1)
        d3 = geometry.slave_distance_from_loop(dts[2], consts, known[1], d1)
        return d1, d2, d3
    if len(known) != 3:
        raise ValueError("CDBA needs the three BSC-to-BTS distances")
    return tuple(geometry.cdba_distance_from_loop(dt, consts, k, literal=eq9_literal)
                 for dt, k in zip(dts, known))
