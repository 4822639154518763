"""Simulation traces and temporal assertions over them.

A trace serializes as newline-delimited JSON, one ``{t, domain, event, details}``
object per line. Assertions are small text expressions::

    IntentSent@OSS-01{intent_id=intent_b}           a pattern
    A ; B ; C                                      ordered subsequence
    A before B                                     every B has an earlier A
    never A                                        absence
    count A >= 2                                   count (==, !=, >=, <=, >, <)

Pattern fields are ``Event[@domain][{key=value,...}]``; ``*`` is a wildcard for
the event, and domain and values are shell-style globs.
"""

from __future__ import annotations

import json
import operator
import re
from dataclasses import dataclass, field
from fnmatch import fnmatchcase
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Union

__all__ = [
    "EVENT_TYPES",
    "AssertionResult",
    "Pattern",
    "TraceEvent",
    "Trace",
    "TraceReport",
    "check_trace",
    "parse_assertion",
    "parse_pattern",
]

EVENT_TYPES = (
    "IntentReceived",
    "IntentSent",
    "IntentRejected",
    "PipelineStateChanged",
    "MonitoringSent",
    "ConflictResolved",
)


@dataclass(frozen=True)
class TraceEvent:
    t: int
    domain: str
    event: str
    details: Dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {"t": self.t, "domain": self.domain, "event": self.event,
             "details": dict(sorted(self.details.items()))},
            separators=(",", ":"),
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "TraceEvent":
        obj = json.loads(line)
        if not isinstance(obj, dict) or set(obj) != {"t", "domain", "event", "details"}:
            raise ValueError("trace line must have exactly t, domain, event, details")
        return cls(int(obj["t"]), str(obj["domain"]), str(obj["event"]),
                   {str(k): str(v) for k, v in obj["details"].items()})

    def __str__(self) -> str:
        det = ",".join(f"{k}={v}" for k, v in sorted(self.details.items()))
        return f"t={self.t} {self.event}@{self.domain}{{{det}}}"


class Trace(Sequence[TraceEvent]):
    def __init__(self, events: Iterable[TraceEvent] = ()):
        self.events: List[TraceEvent] = list(events)

    def __getitem__(self, i):  # type: ignore[override]
        return self.events[i]

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.events)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Trace) and self.events == other.events

    def append(self, event: TraceEvent) -> None:
        self.events.append(event)

    def to_ndjson(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)

    @classmethod
    def from_ndjson(cls, text: str) -> "Trace":
        events = []
        for n, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                events.append(TraceEvent.from_json(line))
            except (ValueError, TypeError, AttributeError) as exc:
                raise ValueError(f"trace line {n}: {exc}") from None
        return cls(events)


# ---------------------------------------------------------------------------
# Patterns
# ---------------------------------------------------------------------------

_PATTERN_RE = re.compile(r"^\s*(?P<event>[A-Za-z]+|\*)(?:@(?P<domain>[^{\s]+))?(?:\{(?P<details>[^}]*)\})?\s*$")


@dataclass(frozen=True)
class Pattern:
    event: str = "*"
    domain: Optional[str] = None
    details: Dict[str, str] = field(default_factory=dict)

    def matches(self, ev: TraceEvent) -> bool:
        if self.event != "*" and ev.event != self.event:
            return False
        if self.domain is not None and not fnmatchcase(ev.domain, self.domain):
            return False
        for k, v in self.details.items():
            if k not in ev.details or not fnmatchcase(ev.details[k], v):
                return False
        return True

    def __str__(self) -> str:
        s = self.event + (f"@{self.domain}" if self.domain else "")
        if self.details:
            s += "{" + ",".join(f"{k}={v}" for k, v in self.details.items()) + "}"
        return s


def parse_pattern(text: str) -> Pattern:
    m = _PATTERN_RE.match(text)
    if not m:
        raise ValueError(f"bad pattern {text!r}")
    details = {}
    if m.group("details"):
        for part in m.group("details").split(","):
            if not part.strip():
                continue
            key, sep, value = part.partition("=")
            if not sep or not key.strip():
                raise ValueError(f"bad detail {part!r} in pattern {text!r}")
            details[key.strip()] = value.strip()
    return Pattern(m.group("event"), m.group("domain"), details)


# ---------------------------------------------------------------------------
# Assertions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AssertionResult:
    """Outcome of one assertion.

    ``index`` is the first counterexample: the trace index of the offending
    event for ``before``/``never``, the failing step number for a subsequence,
    and None otherwise.
    """

    assertion: str
    passed: bool
    index: Optional[int] = None
    message: str = ""

    def to_dict(self) -> Dict[str, object]:
        return {"assertion": self.assertion, "passed": self.passed, "index": self.index, "message": self.message}


@dataclass(frozen=True)
class Subsequence:
    steps: Sequence[Pattern]

    def check(self, trace: Sequence[TraceEvent]) -> AssertionResult:
        pos = 0
        for k, pat in enumerate(self.steps):
            while pos < len(trace) and not pat.matches(trace[pos]):
                pos += 1
            if pos == len(trace):
                return AssertionResult(str(self), False, k, f"step {k} ({pat}) not found")
            pos += 1
        return AssertionResult(str(self), True)

    def __str__(self) -> str:
        return " ; ".join(map(str, self.steps))


@dataclass(frozen=True)
class Precedence:
    first: Pattern
    then: Pattern

    def check(self, trace: Sequence[TraceEvent]) -> AssertionResult:
        seen = False
        for i, ev in enumerate(trace):
            if self.then.matches(ev) and not seen:
                return AssertionResult(str(self), False, i, f"{ev} has no earlier {self.first}")
            if self.first.matches(ev):
                seen = True
        return AssertionResult(str(self), True)

    def __str__(self) -> str:
        return f"{self.first} before {self.then}"


@dataclass(frozen=True)
class Absence:
    pattern: Pattern

    def check(self, trace: Sequence[TraceEvent]) -> AssertionResult:
        for i, ev in enumerate(trace):
            if self.pattern.matches(ev):
                return AssertionResult(str(self), False, i, f"found {ev}")
        return AssertionResult(str(self), True)

    def __str__(self) -> str:
        return f"never {self.pattern}"


_OPS: Dict[str, Callable[[int, int], bool]] = {
    "==": operator.eq, "!=": operator.ne, ">=": operator.ge, "<=": operator.le, ">": operator.gt, "<": operator.lt,
}


@dataclass(frozen=True)
class Count:
    pattern: Pattern
    op: str
    n: int

    def check(self, trace: Sequence[TraceEvent]) -> AssertionResult:
        c = sum(1 for ev in trace if self.pattern.matches(ev))
        ok = _OPS[self.op](c, self.n)
        return AssertionResult(str(self), ok, None, f"count is {c}")

    def __str__(self) -> str:
        return f"count {self.pattern} {self.op} {self.n}"


TraceAssertion = Union[Subsequence, Precedence, Absence, Count]

_COUNT_RE = re.compile(r"^\s*count\s+(?P<pat>.+?)\s*(?P<op>==|!=|>=|<=|>|<)\s*(?P<n>\d+)\s*$")


def parse_assertion(text: str) -> TraceAssertion:
    m = _COUNT_RE.match(text)
    if m:
        return Count(parse_pattern(m.group("pat")), m.group("op"), int(m.group("n")))
    stripped = text.strip()
    if stripped.startswith("never "):
        return Absence(parse_pattern(stripped[len("never "):]))
    if " before " in stripped:
        a, _, b = stripped.partition(" before ")
        return Precedence(parse_pattern(a), parse_pattern(b))
    return Subsequence(tuple(parse_pattern(p) for p in stripped.split(";")))


@dataclass
class TraceReport:
    results: List[AssertionResult]

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> List[AssertionResult]:
        return [r for r in self.results if not r.passed]


def check_trace(trace: Sequence[TraceEvent], assertions: Iterable[Union[str, TraceAssertion]]) -> TraceReport:
    results = []
    for a in assertions:
        parsed = parse_assertion(a) if isinstance(a, str) else a
        results.append(parsed.check(trace))
    return TraceReport(results)
