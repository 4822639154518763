"""Intent language: data model, text format parser/serializer, validation and
the canonical JSON interchange encoding.

The text format is the small indentation-based YAML subset used for intents::

    intentid: intent_c
    targets:
      - id: Factory-01
        operation: stop
        operand: ml_offload

Scalars are never coerced: ``20%`` and ``5QI=1`` come back as the same strings.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

__all__ = [
    "OPERATOR",
    "DEFAULT_VOCABULARY",
    "DecodeError",
    "Finding",
    "Intent",
    "Origin",
    "ParseError",
    "TargetDirective",
    "ValidationReport",
    "Vocabulary",
    "check_domain_id",
    "decode_canonical",
    "encode_canonical",
    "intent_from_obj",
    "intent_to_obj",
    "parse_intent",
    "serialize_intent",
    "validate_intent",
]


class ParseError(ValueError):
    """Malformed intent text. ``line`` and ``column`` are 1-based."""

    def __init__(self, message: str, line: int, column: int = 1, code: str = "syntax"):
        super().__init__(f"line {line}, column {column}: {message}")
        self.message = message
        self.line = line
        self.column = column
        self.code = code

    def to_dict(self) -> Dict[str, object]:
        return {
            "error": "ParseError",
            "code": self.code,
            "message": self.message,
            "line": self.line,
            "column": self.column,
        }


class DecodeError(ValueError):
    """Malformed canonical bytes. ``field`` names the offending key when known."""

    def __init__(self, message: str, offset: int = 0, field: Optional[str] = None):
        super().__init__(message)
        self.offset = offset
        self.field = field


_DOMAIN_RE = re.compile(r"^\S+$")


def check_domain_id(value: str) -> str:
    if not isinstance(value, str) or not _DOMAIN_RE.match(value):
        raise ValueError(f"invalid domain id {value!r}")
    return value


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Origin:
    """Who issued an intent: the operator, or the MLFO of ``domain``."""

    kind: str = "operator"
    domain: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind == "operator":
            if self.domain is not None:
                raise ValueError("operator origin carries no domain")
        elif self.kind == "mlfo":
            check_domain_id(self.domain)  # type: ignore[arg-type]
        else:
            raise ValueError(f"unknown origin kind {self.kind!r}")

    @classmethod
    def mlfo(cls, domain: str) -> "Origin":
        return cls("mlfo", domain)

    @property
    def is_operator(self) -> bool:
        return self.kind == "operator"

    @property
    def label(self) -> str:
        return "operator" if self.is_operator else str(self.domain)

    def __str__(self) -> str:
        return self.label


OPERATOR = Origin()


@dataclass(frozen=True)
class TargetDirective:
    target_id: str
    operation: str
    operand: str
    oparams: Dict[str, str] = field(default_factory=dict)
    constraints: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        check_domain_id(self.target_id)
        if not self.operation or not self.operand:
            raise ValueError("operation and operand must be non-empty")
        for name in ("oparams", "constraints"):
            mapping = getattr(self, name)
            if not all(isinstance(k, str) and isinstance(v, str) for k, v in mapping.items()):
                raise ValueError(f"{name} must map strings to strings")

    def same_effect(self, other: "TargetDirective") -> bool:
        """Identical (operation, oparams) on the same operand: not a conflict."""
        return (
            self.operand == other.operand
            and self.operation == other.operation
            and self.oparams == other.oparams
        )


@dataclass(frozen=True)
class Intent:
    intent_id: str
    targets: Tuple[TargetDirective, ...]
    origin: Origin = OPERATOR
    priority: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.intent_id or re.search(r"\s", self.intent_id):
            raise ValueError(f"invalid intent id {self.intent_id!r}")
        object.__setattr__(self, "targets", tuple(self.targets))
        if not self.targets:
            raise ValueError("an intent needs at least one target directive")
        if self.priority is not None and (
            isinstance(self.priority, bool) or not isinstance(self.priority, int) or self.priority < 0
        ):
            raise ValueError("priority must be a non-negative integer")


# ---------------------------------------------------------------------------
# Vocabulary and validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    known_operations: frozenset = frozenset({"maintain", "anticipate", "stop", "maximise", "minimise"})
    known_operands: frozenset = frozenset(
        {"SLA", "QoS", "ml_inference", "ml_offload", "accuracy", "capacity"}
    )
    strict: bool = False

    def extended(self, operations: Iterable[str] = (), operands: Iterable[str] = ()) -> "Vocabulary":
        return Vocabulary(
            self.known_operations | frozenset(operations),
            self.known_operands | frozenset(operands),
            self.strict,
        )


DEFAULT_VOCABULARY = Vocabulary()


@dataclass(frozen=True)
class Finding:
    severity: str  # "error" | "warning"
    code: str
    message: str
    target_index: Optional[int] = None

    def to_dict(self) -> Dict[str, object]:
        return {
            "severity": self.severity,
            "code": self.code,
            "message": self.message,
            "target_index": self.target_index,
        }


@dataclass
class ValidationReport:
    intent_id: str
    findings: List[Finding] = field(default_factory=list)

    @property
    def errors(self) -> List[Finding]:
        return [f for f in self.findings if f.severity == "error"]

    @property
    def warnings(self) -> List[Finding]:
        return [f for f in self.findings if f.severity == "warning"]

    @property
    def accepted(self) -> bool:
        return not self.errors


def validate_intent(
    intent: Intent,
    vocab: Vocabulary = DEFAULT_VOCABULARY,
    topology_domains: Optional[Iterable[str]] = None,
) -> ValidationReport:
    """Check targets and vocabulary. Findings are data; nothing is raised.

    ``topology_domains=None`` skips the target check.
    """
    report = ValidationReport(intent.intent_id)
    domains = None if topology_domains is None else set(topology_domains)
    vocab_severity = "error" if vocab.strict else "warning"
    for i, d in enumerate(intent.targets):
        if domains is not None and d.target_id not in domains:
            report.findings.append(
                Finding("error", "unknown-target", f"target {d.target_id!r} is not in the topology", i)
            )
        if d.operation not in vocab.known_operations:
            report.findings.append(
                Finding(vocab_severity, "unknown-operation", f"operation {d.operation!r} is not known", i)
            )
        if d.operand not in vocab.known_operands:
            report.findings.append(
                Finding(vocab_severity, "unknown-operand", f"operand {d.operand!r} is not known", i)
            )
    return report


# ---------------------------------------------------------------------------
# Intent text format
# ---------------------------------------------------------------------------

_TOP_KEYS = ("intentid", "targets", "priority")
_DIRECTIVE_KEYS = ("id", "operation", "operand", "oparams", "constraints")
_MAP_KEYS = ("oparams", "constraints")
_KEY_RE = re.compile(r"^[^\s:#'\"\-\[\]{}&*!|>%@`,?][^\s:]*$")


@dataclass
class _Line:
    number: int
    indent: int  # column of the key, 0-based
    item: bool  # line opened with "- "
    key: str
    value: Optional[str]  # None when the key has no inline value
    value_col: int


def _unquote(raw: str, line: int, col: int) -> str:
    if raw.startswith('"'):
        try:
            value, end = json.JSONDecoder().raw_decode(raw)
        except json.JSONDecodeError:
            raise ParseError("unterminated double-quoted scalar", line, col) from None
        if end != len(raw) or not isinstance(value, str):
            raise ParseError("trailing characters after quoted scalar", line, col + end)
        return value
    if raw.startswith("'"):
        if len(raw) < 2 or not raw.endswith("'"):
            raise ParseError("unterminated single-quoted scalar", line, col)
        body = raw[1:-1]
        if re.search(r"(?<!')'(?!')", body.replace("''", "")):
            raise ParseError("stray quote in single-quoted scalar", line, col)
        return body.replace("''", "'")
    if raw[0] in "[{":
        raise ParseError("flow collections are not supported", line, col, "unsupported")
    if raw[0] in "&*!":
        raise ParseError("anchors, aliases and tags are not supported", line, col, "unsupported")
    if raw in ("|", ">", "|-", ">-", "|+", ">+"):
        raise ParseError("multi-line scalars are not supported", line, col, "unsupported")
    return raw


def _tokenize(text: str) -> List[_Line]:
    lines: List[_Line] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.rstrip()
        if not stripped.strip() or stripped.lstrip().startswith("#"):
            continue
        body = stripped.lstrip(" ")
        indent = len(stripped) - len(body)
        if body.startswith("\t"):
            raise ParseError("tabs are not allowed in indentation", number, indent + 1, "bad-indent")
        item = False
        if body == "-" or body.startswith("- "):
            item = True
            rest = body[1:].lstrip(" ")
            if not rest:
                raise ParseError("empty sequence item", number, indent + 1)
            indent = indent + (len(body) - len(rest))
            body = rest
        if ":" not in body:
            raise ParseError("expected 'key: value'", number, indent + 1)
        if body.startswith(("'", '"')):
            raise ParseError("quoted keys are not supported", number, indent + 1, "unsupported")
        key, sep, rest = body.partition(":")
        if rest and not rest.startswith(" "):
            raise ParseError("expected a space after ':'", number, indent + len(key) + 2)
        if not _KEY_RE.match(key):
            raise ParseError(f"invalid key {key!r}", number, indent + 1)
        value_raw = rest.strip()
        value_col = indent + len(key) + 2 + (len(rest) - len(rest.lstrip(" ")))
        if value_raw.startswith("#"):
            value_raw = ""
        elif " #" in value_raw and not value_raw.startswith(("'", '"')):
            value_raw = value_raw.split(" #", 1)[0].rstrip()
        value = _unquote(value_raw, number, value_col) if value_raw else None
        lines.append(_Line(number, indent, item, key, value, value_col))
    return lines


def _put(mapping: Dict[str, object], ln: _Line, value: object) -> None:
    if ln.key in mapping:
        raise ParseError(f"duplicate key {ln.key!r}", ln.number, ln.indent + 1, "duplicate-key")
    mapping[ln.key] = value


def parse_intent(text: str, origin: Origin = OPERATOR) -> Intent:
    """Parse one intent document.

    The text format carries no origin; the receiving side supplies it
    (``OPERATOR`` for documents handed to the root orchestrator).
    """
    lines = _tokenize(text)
    top: Dict[str, object] = {}
    key_lines: Dict[str, _Line] = {}
    i = 0
    while i < len(lines):
        ln = lines[i]
        if ln.indent != 0 or ln.item:
            raise ParseError("expected a top-level key at column 1", ln.number, ln.indent + 1, "bad-indent")
        if ln.key not in _TOP_KEYS:
            raise ParseError(f"unknown top-level key {ln.key!r}", ln.number, 1, "unknown-key")
        if ln.key in top:
            raise ParseError(f"duplicate key {ln.key!r}", ln.number, 1, "duplicate-key")
        key_lines[ln.key] = ln
        if ln.key == "targets":
            if ln.value is not None:
                raise ParseError("'targets' must be a sequence", ln.number, ln.value_col + 1)
            i, targets = _parse_targets(lines, i + 1, ln)
            top["targets"] = targets
            continue
        if ln.value is None:
            raise ParseError(f"{ln.key!r} needs a value", ln.number, ln.value_col)
        top[ln.key] = ln.value
        i += 1

    last_line = lines[-1].number + 1 if lines else 1
    if "intentid" not in top:
        raise ParseError("missing 'intentid'", last_line, 1, "missing-intentid")
    if "targets" not in top:
        raise ParseError("missing 'targets'", last_line, 1, "empty-targets")
    priority = None
    if "priority" in top:
        raw = str(top["priority"])
        if not raw.isdigit():
            pl = key_lines["priority"]
            raise ParseError("priority must be a non-negative integer", pl.number, pl.value_col + 1)
        priority = int(raw)
    intent_id = str(top["intentid"])
    if re.search(r"\s", intent_id):
        il = key_lines["intentid"]
        raise ParseError("intentid may not contain whitespace", il.number, il.value_col + 1)
    return Intent(intent_id, tuple(top["targets"]), origin, priority)  # type: ignore[arg-type]


def _parse_targets(lines: List[_Line], i: int, header: _Line) -> Tuple[int, List[TargetDirective]]:
    targets: List[TargetDirective] = []
    while i < len(lines) and lines[i].indent > 0:
        ln = lines[i]
        if not ln.item or ln.indent != 4:
            raise ParseError("expected '  - ' to start a target", ln.number, ln.indent + 1, "bad-indent")
        fields: Dict[str, object] = {}
        start = ln
        first = True
        while i < len(lines):
            ln = lines[i]
            if ln.indent == 0 or (ln.item and not first):
                break
            if ln.indent != 4 or (ln.item and not first):
                raise ParseError("misaligned target field", ln.number, ln.indent + 1, "bad-indent")
            first = False
            if ln.key not in _DIRECTIVE_KEYS:
                raise ParseError(f"unknown target key {ln.key!r}", ln.number, ln.indent + 1, "unknown-key")
            if ln.key in _MAP_KEYS:
                if ln.value is not None:
                    raise ParseError(f"{ln.key!r} must be a mapping", ln.number, ln.value_col + 1)
                mapping: Dict[str, str] = {}
                i += 1
                while i < len(lines) and lines[i].indent > 4 and not lines[i].item:
                    sub = lines[i]
                    if sub.indent != 6:
                        raise ParseError("expected 2-space nesting", sub.number, sub.indent + 1, "bad-indent")
                    if sub.value is None:
                        raise ParseError(f"{sub.key!r} needs a scalar value", sub.number, sub.value_col)
                    _put(mapping, sub, sub.value)  # type: ignore[arg-type]
                    i += 1
                if i < len(lines) and lines[i].indent > 4:
                    bad = lines[i]
                    raise ParseError("nested sequences are not supported", bad.number, bad.indent + 1, "bad-indent")
                _put(fields, ln, mapping)
                continue
            if ln.value is None:
                raise ParseError(f"{ln.key!r} needs a value", ln.number, ln.value_col)
            _put(fields, ln, ln.value)
            i += 1
        for required in ("id", "operation", "operand"):
            if required not in fields:
                raise ParseError(f"target is missing {required!r}", start.number, start.indent + 1, "missing-field")
        try:
            targets.append(
                TargetDirective(
                    str(fields["id"]),
                    str(fields["operation"]),
                    str(fields["operand"]),
                    dict(fields.get("oparams", {})),  # type: ignore[arg-type]
                    dict(fields.get("constraints", {})),  # type: ignore[arg-type]
                )
            )
        except ValueError as exc:
            raise ParseError(str(exc), start.number, start.indent + 1) from None
    if not targets:
        raise ParseError("'targets' is empty", header.number, header.indent + 1, "empty-targets")
    return i, targets


# str.splitlines() breaks on these too, so they must be escaped inside quotes
_LINE_BREAKS = {"\x85": "\\u0085", "\u2028": "\\u2028", "\u2029": "\\u2029"}


def _needs_quotes(value: str) -> bool:
    if not value or value != value.strip():
        return True
    if value[0] in "'\"[{&*!|>#":
        return True
    if value in ("-",) or value.startswith("- "):
        return True
    if ": " in value or value.endswith(":") or " #" in value:
        return True
    return any(ord(c) < 0x20 or c in _LINE_BREAKS for c in value)


def _scalar(value: str) -> str:
    if not _needs_quotes(value):
        return value
    quoted = json.dumps(value, ensure_ascii=False)
    for ch, esc in _LINE_BREAKS.items():
        quoted = quoted.replace(ch, esc)
    return quoted


def serialize_intent(intent: Intent) -> str:
    """Canonical text: 2-space indentation, fixed field order, empty maps omitted."""
    out = [f"intentid: {_scalar(intent.intent_id)}", "targets:"]
    for d in intent.targets:
        out.append(f"  - id: {_scalar(d.target_id)}")
        out.append(f"    operation: {_scalar(d.operation)}")
        out.append(f"    operand: {_scalar(d.operand)}")
        for name in _MAP_KEYS:
            mapping = getattr(d, name)
            if mapping:
                out.append(f"    {name}:")
                out.extend(f"      {k}: {_scalar(v)}" for k, v in mapping.items())
    if intent.priority is not None:
        out.append(f"priority: {intent.priority}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Canonical interchange encoding
# ---------------------------------------------------------------------------


def intent_to_obj(intent: Intent) -> Dict[str, object]:
    obj: Dict[str, object] = {
        "intentid": intent.intent_id,
        "origin": {"kind": intent.origin.kind}
        if intent.origin.is_operator
        else {"kind": intent.origin.kind, "domain": intent.origin.domain},
        "targets": [
            {
                "id": d.target_id,
                "operation": d.operation,
                "operand": d.operand,
                "oparams": dict(d.oparams),
                "constraints": dict(d.constraints),
            }
            for d in intent.targets
        ],
    }
    if intent.priority is not None:
        obj["priority"] = intent.priority
    return obj


def dumps_canonical(obj: object) -> bytes:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def encode_canonical(intent: Intent) -> bytes:
    return dumps_canonical(intent_to_obj(intent))


def expect_keys(obj: object, required: Iterable[str], optional: Iterable[str] = (), where: str = "") -> Dict:
    """Closed-schema check shared by every canonical decoder."""
    if not isinstance(obj, dict):
        raise DecodeError(f"{where or 'value'} must be an object", field=where or None)
    allowed = set(required) | set(optional)
    for key in obj:
        if key not in allowed:
            raise DecodeError(f"unexpected field {key!r} in {where or 'object'}", field=key)
    for key in required:
        if key not in obj:
            raise DecodeError(f"missing field {key!r} in {where or 'object'}", field=key)
    return obj


def string_map(obj: object, where: str) -> Dict[str, str]:
    if not isinstance(obj, dict) or not all(isinstance(v, str) for v in obj.values()):
        raise DecodeError(f"{where} must map strings to strings", field=where)
    return dict(obj)


def _string(obj: Dict, key: str) -> str:
    value = obj[key]
    if not isinstance(value, str):
        raise DecodeError(f"{key!r} must be a string", field=key)
    return value


def intent_from_obj(obj: object) -> Intent:
    top = expect_keys(obj, ("intentid", "origin", "targets"), ("priority",), "intent")
    origin_obj = expect_keys(top["origin"], ("kind",), ("domain",), "origin")
    targets_obj = top["targets"]
    if not isinstance(targets_obj, list):
        raise DecodeError("'targets' must be a list", field="targets")
    try:
        targets = []
        for t in targets_obj:
            t = expect_keys(t, ("id", "operation", "operand", "oparams", "constraints"), (), "target")
            targets.append(
                TargetDirective(
                    _string(t, "id"),
                    _string(t, "operation"),
                    _string(t, "operand"),
                    string_map(t["oparams"], "oparams"),
                    string_map(t["constraints"], "constraints"),
                )
            )
        origin = Origin(origin_obj["kind"], origin_obj.get("domain"))
        return Intent(_string(top, "intentid"), tuple(targets), origin, top.get("priority"))
    except ValueError as exc:
        if isinstance(exc, DecodeError):
            raise
        raise DecodeError(str(exc)) from None


def loads_canonical(data: bytes) -> object:
    try:
        return json.loads(data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data)
    except UnicodeDecodeError as exc:
        raise DecodeError(f"invalid UTF-8: {exc.reason}", exc.start) from None
    except json.JSONDecodeError as exc:
        raise DecodeError(f"invalid JSON: {exc.msg}", exc.pos) from None


def decode_canonical(data: bytes) -> Intent:
    return intent_from_obj(loads_canonical(data))
