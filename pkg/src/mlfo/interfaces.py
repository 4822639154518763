"""The two inter-orchestrator channels.

Intents travel down exactly one level (parent to child); monitoring reports and
events travel up exactly one level (child to parent). Every payload crosses the
domain boundary in a closed schema, and internal pipeline details are refused
by :func:`privacy_filter`.

Wire format: one JSON object per line, ``{seq, sender, recipient, kind, payload}``,
where ``payload`` is the canonical JSON of the inner message carried as a string.
"""

from __future__ import annotations

import enum
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, Iterable, Iterator, List, Optional, Tuple, Union

from .intent import (
    DecodeError,
    Intent,
    decode_canonical,
    dumps_canonical,
    encode_canonical,
    expect_keys,
    intent_from_obj,
    loads_canonical,
    string_map,
)
from .topology import Topology

__all__ = [
    "EVENT_KINDS",
    "FORBIDDEN_KEYS",
    "DirectionError",
    "Envelope",
    "MessageKind",
    "MonitoringEvent",
    "MonitoringReport",
    "Network",
    "PrivacyError",
    "SequenceError",
    "check_direction",
    "decode_envelope",
    "decode_message",
    "encode_envelope",
    "encode_message",
    "privacy_filter",
]

EVENT_KINDS = ("ThresholdCrossover", "PolicyViolation", "Failure", "SecurityViolation", "RedeploymentNotice")

# Internal details a domain never exposes across an interface.
FORBIDDEN_KEYS = frozenset(
    {"nodes", "model_ref", "catalog", "pipeline_catalog", "topology", "placement", "pipeline_id"}
)


class DirectionError(RuntimeError):
    pass


class PrivacyError(RuntimeError):
    def __init__(self, field_name: str, detail: str = ""):
        super().__init__(f"privacy filter rejected field {field_name!r}" + (f": {detail}" if detail else ""))
        self.field = field_name


class SequenceError(RuntimeError):
    pass


class MessageKind(str, enum.Enum):
    INTENT = "IntentMsg"
    REPORT = "MonitoringReportMsg"
    EVENT = "MonitoringEventMsg"

    @property
    def upward(self) -> bool:
        return self is not MessageKind.INTENT


@dataclass(frozen=True)
class MonitoringReport:
    sender: str
    at: int
    metrics: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class MonitoringEvent:
    sender: str
    at: int
    kind: str
    attrs: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown monitoring event kind {self.kind!r}")
        if self.kind == "RedeploymentNotice" and "pipeline_id" not in self.attrs:
            raise ValueError("RedeploymentNotice requires attrs.pipeline_id")


Message = Union[Intent, MonitoringReport, MonitoringEvent]


def kind_of(message: Message) -> MessageKind:
    if isinstance(message, Intent):
        return MessageKind.INTENT
    if isinstance(message, MonitoringReport):
        return MessageKind.REPORT
    if isinstance(message, MonitoringEvent):
        return MessageKind.EVENT
    raise TypeError(f"not a channel message: {type(message).__name__}")


def encode_message(message: Message) -> bytes:
    if isinstance(message, Intent):
        return encode_canonical(message)
    if isinstance(message, MonitoringReport):
        return dumps_canonical({"sender": message.sender, "at": message.at, "metrics": dict(message.metrics)})
    if isinstance(message, MonitoringEvent):
        return dumps_canonical(
            {"sender": message.sender, "at": message.at, "kind": message.kind, "attrs": dict(message.attrs)}
        )
    raise TypeError(f"not a channel message: {type(message).__name__}")


def _message_from_obj(obj: object, kind: MessageKind) -> Message:
    if kind is MessageKind.INTENT:
        return intent_from_obj(obj)
    if kind is MessageKind.REPORT:
        top = expect_keys(obj, ("sender", "at", "metrics"), (), "report")
        _check_header(top)
        return MonitoringReport(top["sender"], top["at"], string_map(top["metrics"], "metrics"))
    top = expect_keys(obj, ("sender", "at", "kind", "attrs"), (), "event")
    _check_header(top)
    try:
        return MonitoringEvent(top["sender"], top["at"], top["kind"], string_map(top["attrs"], "attrs"))
    except ValueError as exc:
        raise DecodeError(str(exc), field="kind") from None


def _check_header(top: Dict) -> None:
    if not isinstance(top["sender"], str) or not top["sender"]:
        raise DecodeError("'sender' must be a non-empty string", field="sender")
    if isinstance(top["at"], bool) or not isinstance(top["at"], int):
        raise DecodeError("'at' must be an integer", field="at")


def decode_message(payload: bytes, kind: MessageKind) -> Message:
    kind = MessageKind(kind)
    if kind is MessageKind.INTENT:
        return decode_canonical(payload)
    return _message_from_obj(loads_canonical(payload), kind)


# ---------------------------------------------------------------------------
# Privacy
# ---------------------------------------------------------------------------


def _forbidden_key(obj: object, kind: MessageKind, path: Tuple[str, ...] = ()) -> Optional[str]:
    if isinstance(obj, dict):
        for key, value in obj.items():
            if key in FORBIDDEN_KEYS:
                allowed = (
                    key == "pipeline_id"
                    and kind is MessageKind.EVENT
                    and path == ("attrs",)
                    and isinstance(value, str)
                )
                if not allowed:
                    return key
            found = _forbidden_key(value, kind, path + (str(key),))
            if found:
                return found
    elif isinstance(obj, list):
        for item in obj:
            found = _forbidden_key(item, kind, path)
            if found:
                return found
    return None


def privacy_filter(payload: bytes, kind: MessageKind) -> Message:
    """Return the decoded message if ``payload`` may cross a domain boundary.

    Raises :class:`PrivacyError` naming the first offending field: a forbidden
    internal key anywhere in the payload, or anything outside the closed schema
    of ``kind``. ``pipeline_id`` is allowed only as an attribute of a
    RedeploymentNotice event.
    """
    kind = MessageKind(kind)
    try:
        obj = loads_canonical(payload)
    except DecodeError as exc:
        raise PrivacyError("payload", str(exc)) from None
    bad = _forbidden_key(obj, kind)
    if bad is not None:
        raise PrivacyError(bad, "internal detail")
    try:
        message = _message_from_obj(obj, kind)
    except DecodeError as exc:
        raise PrivacyError(exc.field or "payload", str(exc)) from None
    if isinstance(message, MonitoringEvent) and "pipeline_id" in message.attrs:
        if message.kind != "RedeploymentNotice":
            raise PrivacyError("pipeline_id", "only a RedeploymentNotice may name a pipeline")
    return message


# ---------------------------------------------------------------------------
# Envelopes
# ---------------------------------------------------------------------------

_ENVELOPE_FIELDS = ("seq", "sender", "recipient", "kind", "payload")


@dataclass(frozen=True)
class Envelope:
    seq: int
    sender: str
    recipient: str
    kind: MessageKind
    payload: bytes

    @classmethod
    def wrap(cls, seq: int, sender: str, recipient: str, message: Message) -> "Envelope":
        return cls(seq, sender, recipient, kind_of(message), encode_message(message))

    def open(self) -> Message:
        return decode_message(self.payload, self.kind)


def encode_envelope(env: Envelope) -> bytes:
    obj = {
        "seq": env.seq,
        "sender": env.sender,
        "recipient": env.recipient,
        "kind": MessageKind(env.kind).value,
        "payload": env.payload.decode("utf-8"),
    }
    return dumps_canonical(obj) + b"\n"


def decode_envelope(line: bytes, offset: int = 0) -> Envelope:
    """Decode one wire line; ``offset`` is the line's position in its stream."""
    try:
        obj = loads_canonical(line)
    except DecodeError as exc:
        raise DecodeError(str(exc), offset + exc.offset) from None
    try:
        obj = expect_keys(obj, _ENVELOPE_FIELDS, (), "envelope")
    except DecodeError as exc:
        raise DecodeError(str(exc), offset, exc.field) from None
    seq = obj["seq"]
    if isinstance(seq, bool) or not isinstance(seq, int) or seq < 0:
        raise DecodeError("'seq' must be a non-negative integer", offset, "seq")
    for key in ("sender", "recipient", "payload"):
        if not isinstance(obj[key], str):
            raise DecodeError(f"{key!r} must be a string", offset, key)
    try:
        kind = MessageKind(obj["kind"])
    except ValueError:
        raise DecodeError(f"unknown kind {obj['kind']!r}", offset, "kind") from None
    return Envelope(seq, obj["sender"], obj["recipient"], kind, obj["payload"].encode("utf-8"))


def iter_envelopes(data: bytes) -> Iterator[Envelope]:
    offset = 0
    for line in data.splitlines(keepends=True):
        if line.strip():
            yield decode_envelope(line, offset)
        offset += len(line)


# ---------------------------------------------------------------------------
# Delivery
# ---------------------------------------------------------------------------


def check_direction(topology: Topology, env: Envelope) -> None:
    for d in (env.sender, env.recipient):
        if d not in topology:
            raise DirectionError(f"unknown domain {d!r}")
    if MessageKind(env.kind).upward:
        if topology.parent(env.sender) != env.recipient:
            raise DirectionError(f"{env.kind.value} must go to the parent of {env.sender}, not {env.recipient}")
    elif not topology.is_child(env.recipient, env.sender):
        raise DirectionError(f"IntentMsg must go to a child of {env.sender}, not {env.recipient}")


class Network:
    """Reliable FIFO delivery between orchestrators of one topology.

    Each inbox is a deque appended by any producer and drained only by its
    owning actor. ``delivered`` keeps every accepted envelope in send order.
    """

    def __init__(self, topology: Topology):
        self.topology = topology
        self.inboxes: Dict[str, Deque[Envelope]] = {d: deque() for d in topology.domains}
        self.delivered: List[Envelope] = []
        self._next_seq: Dict[Tuple[str, str], int] = {}
        self._last_seq: Dict[Tuple[str, str], int] = {}
        self._lock = threading.Lock()

    def next_seq(self, sender: str, recipient: str) -> int:
        with self._lock:
            seq = self._next_seq.get((sender, recipient), 1)
            self._next_seq[(sender, recipient)] = seq + 1
            return seq

    def wrap(self, sender: str, recipient: str, message: Message) -> Envelope:
        return Envelope.wrap(self.next_seq(sender, recipient), sender, recipient, message)

    def send(self, env: Envelope) -> Envelope:
        check_direction(self.topology, env)
        privacy_filter(env.payload, env.kind)
        with self._lock:
            last = self._last_seq.get((env.sender, env.recipient), 0)
            if env.seq <= last:
                raise SequenceError(f"seq {env.seq} not above {last} on {env.sender}->{env.recipient}")
            self._last_seq[(env.sender, env.recipient)] = env.seq
            self.inboxes[env.recipient].append(env)
            self.delivered.append(env)
        return env

    def receive(self, domain: str) -> Optional[Envelope]:
        inbox = self.inboxes[domain]
        return inbox.popleft() if inbox else None


def send(network: Network, env: Envelope) -> Envelope:
    return network.send(env)


def check_delivered(topology: Topology, envelopes: Iterable[Envelope]) -> List[str]:
    """Direction and privacy violations among already-delivered envelopes."""
    problems = []
    for env in envelopes:
        rs, rr = topology.rank(env.sender), topology.rank(env.recipient)
        if env.kind is MessageKind.INTENT and rr != rs + 1:
            problems.append(f"intent {env.sender}->{env.recipient} is not one level down")
        if env.kind is not MessageKind.INTENT and rr != rs - 1:
            problems.append(f"monitoring {env.sender}->{env.recipient} is not one level up")
        try:
            privacy_filter(env.payload, env.kind)
        except PrivacyError as exc:
            problems.append(str(exc))
    return problems
