import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlfo.intent import (
    DEFAULT_VOCABULARY,
    OPERATOR,
    DecodeError,
    Intent,
    Origin,
    ParseError,
    TargetDirective,
    Vocabulary,
    decode_canonical,
    encode_canonical,
    parse_intent,
    serialize_intent,
    validate_intent,
)

from helpers import SMART_FACTORY_DOMAINS, intent_text


# --- parsing the reference intents ---------------------------------------------------


def test_intent_a_parses():
    intent = parse_intent(intent_text("a"))
    assert intent == Intent(
        "intent_a",
        (TargetDirective("OSS-01", "maintain", "SLA", {"network": "Edge-smart-factory-01"}),),
        OPERATOR,
    )


def test_intent_b_parses():
    intent = parse_intent(intent_text("b"))
    assert intent.intent_id == "intent_b"
    assert intent.targets == (
        TargetDirective("Edge-smart-factory-01", "anticipate", "QoS", {"expected_drop": "20%"}),
        TargetDirective("Edge-smart-factory-01", "maintain", "ml_inference", {"minaccuracy": "95%"}),
    )


def test_intent_c_parses():
    intent = parse_intent(intent_text("c"))
    assert intent.intent_id == "intent_c"
    assert intent.targets == (TargetDirective("Factory-01", "stop", "ml_offload"),)


@pytest.mark.parametrize("name", ["a", "b", "c"])
def test_reference_intents_validate_clean(name):
    report = validate_intent(parse_intent(intent_text(name)), DEFAULT_VOCABULARY, SMART_FACTORY_DOMAINS)
    assert report.accepted
    assert report.findings == []


@pytest.mark.parametrize("name", ["a", "b", "c"])
def test_reference_intents_are_canonical(name):
    text = intent_text(name)
    body = "\n".join(line for line in text.splitlines() if line.strip()) + "\n"
    assert serialize_intent(parse_intent(text)) == body


def test_scalars_kept_verbatim():
    text = (
        "intentid: x1\n"
        "targets:\n"
        "  - id: Edge-01\n"
        "    operation: maintain\n"
        "    operand: QoS\n"
        "    oparams:\n"
        "      5qi: 5QI=1\n"
        "      drop: 20%\n"
        "      flag: true\n"
        "      n: 007\n"
    )
    oparams = parse_intent(text).targets[0].oparams
    assert oparams == {"5qi": "5QI=1", "drop": "20%", "flag": "true", "n": "007"}
    assert list(oparams) == ["5qi", "drop", "flag", "n"]


def test_constraints_and_priority_round_trip():
    intent = Intent(
        "i9",
        (TargetDirective("Edge-01", "minimise", "capacity", {}, {"latency": "10ms", "privacy": "high"}),),
        OPERATOR,
        priority=2,
    )
    text = serialize_intent(intent)
    assert "oparams" not in text
    assert text.endswith("priority: 2\n")
    assert parse_intent(text) == intent


def test_origin_is_supplied_by_receiver():
    intent = parse_intent(intent_text("c"), Origin.mlfo("Edge-smart-factory-01"))
    assert intent.origin.label == "Edge-smart-factory-01"


# --- parse errors -------------------------------------------------------------


@pytest.mark.parametrize(
    "text, code, line",
    [
        ("intentid: a\ntargets:\n", "empty-targets", 2),
        ("targets:\n  - id: A\n    operation: o\n    operand: p\n", "missing-intentid", 5),
        ("intentid: a\nintentid: b\ntargets:\n  - id: A\n    operation: o\n    operand: p\n", "duplicate-key", 2),
        ("intentid: a\ntargets:\n  - id: A\n    operation: o\n    operation: q\n    operand: p\n", "duplicate-key", 5),
        ("intentid: a\ntargets:\n  - id: A\n    operation: o\n    operand: p\n    oparams:\n      k: 1\n      k: 2\n",
         "duplicate-key", 8),
        ("intentid: a\nowner: me\ntargets:\n  - id: A\n    operation: o\n    operand: p\n", "unknown-key", 2),
        ("intentid: a\ntargets:\n  - id: A\n     operation: o\n    operand: p\n", "bad-indent", 4),
        ("intentid: a\ntargets:\n  - id: A\n    operation: o\n    operand: p\n    oparams:\n        k: v\n",
         "bad-indent", 7),
        ("intentid: a\ntargets:\n\t- id: A\n", "bad-indent", 3),
        ("intentid: a\ntargets:\n  - id: A\n    operand: p\n", "missing-field", 3),
        ("intentid: a\ntargets:\n  - id: A\n    operation: o\n    operand: p\n    oparams: {k: v}\n", None, 6),
    ],
)
def test_parse_errors(text, code, line):
    with pytest.raises(ParseError) as info:
        parse_intent(text)
    assert info.value.line == line
    if code:
        assert info.value.code == code
    assert info.value.to_dict()["line"] == line


def test_parse_error_column_points_at_key():
    with pytest.raises(ParseError) as info:
        parse_intent("intentid: a\ntargets:\n  - id: A\n     operation: o\n")
    assert info.value.column == 6


@pytest.mark.parametrize("bad", ["&anchor", "*alias", "|", ">", "[a, b]"])
def test_unsupported_yaml_features(bad):
    text = f"intentid: a\ntargets:\n  - id: A\n    operation: {bad}\n    operand: p\n"
    with pytest.raises(ParseError):
        parse_intent(text)


def test_comments_and_quotes():
    text = (
        "# leading comment\n"
        "intentid: a  # trailing\n"
        "targets:\n"
        "  - id: A\n"
        "    operation: 'say ''hi'''\n"
        '    operand: "x: y"\n'
    )
    intent = parse_intent(text)
    assert intent.intent_id == "a"
    assert intent.targets[0].operation == "say 'hi'"
    assert intent.targets[0].operand == "x: y"


# --- validation severity table -----------------------------------------------

VERBS = ("maintain", "anticipate", "stop", "maximise", "minimise")


def _expected_findings(op_known, operand_known, target_known, strict):
    # written from the rule table, independently of validate_intent
    out = set()
    if not target_known:
        out.add(("error", "unknown-target"))
    vocab_sev = "error" if strict else "warning"
    if not op_known:
        out.add((vocab_sev, "unknown-operation"))
    if not operand_known:
        out.add((vocab_sev, "unknown-operand"))
    return out


def test_validation_severity_table():
    vocab_ops = frozenset(VERBS)
    operands = ("QoS", "mystery")
    ops = VERBS + ("defragment",)
    targets = ("Edge-01", "Ghost-99")
    checked = 0
    for op, operand, target, strict in itertools.product(ops, operands, targets, (False, True)):
        vocab = Vocabulary(vocab_ops, frozenset({"QoS"}), strict)
        intent = Intent("v", (TargetDirective(target, op, operand),))
        report = validate_intent(intent, vocab, {"Edge-01"})
        got = {(f.severity, f.code) for f in report.findings}
        want = _expected_findings(op in vocab_ops, operand == "QoS", target == "Edge-01", strict)
        assert got == want, (op, operand, target, strict)
        assert report.accepted == (not any(sev == "error" for sev, _ in want))
        checked += 1
    assert checked == 6 * 2 * 2 * 2


def test_defragment_strict_and_lenient():
    intent = Intent("d", (TargetDirective("OSS-01", "defragment", "QoS"),))
    lenient = validate_intent(intent, DEFAULT_VOCABULARY, SMART_FACTORY_DOMAINS)
    strict = validate_intent(intent, Vocabulary(strict=True), SMART_FACTORY_DOMAINS)
    assert lenient.accepted and [f.code for f in lenient.warnings] == ["unknown-operation"]
    assert not strict.accepted and [f.code for f in strict.errors] == ["unknown-operation"]


def test_unknown_target():
    intent = Intent("g", (TargetDirective("Ghost-99", "maintain", "SLA"),))
    report = validate_intent(intent, DEFAULT_VOCABULARY, SMART_FACTORY_DOMAINS)
    assert not report.accepted
    assert report.errors[0].code == "unknown-target"
    assert report.errors[0].target_index == 0


def test_default_vocabulary_seed():
    assert {"maintain", "anticipate", "stop", "maximise", "minimise"} <= DEFAULT_VOCABULARY.known_operations
    assert {"SLA", "QoS", "ml_inference", "ml_offload", "accuracy", "capacity"} <= DEFAULT_VOCABULARY.known_operands


# --- canonical interchange encoding ------------------------------------------


def test_canonical_round_trip_intent_a():
    intent = parse_intent(intent_text("a"))
    assert decode_canonical(encode_canonical(intent)) == intent


def test_canonical_is_deterministic():
    a = parse_intent(intent_text("b"))
    b = parse_intent(serialize_intent(a))
    assert a is not b
    assert encode_canonical(a) == encode_canonical(b)


def test_truncated_bytes_fail():
    data = encode_canonical(parse_intent(intent_text("a")))
    for cut in (0, 1, len(data) // 2, len(data) - 1):
        with pytest.raises(DecodeError):
            decode_canonical(data[:cut])


def test_decode_rejects_extra_field():
    data = encode_canonical(parse_intent(intent_text("c"))).replace(b'"intentid"', b'"extra":1,"intentid"')
    with pytest.raises(DecodeError) as info:
        decode_canonical(data)
    assert info.value.field == "extra"


# --- properties over generated intents ---------------------------------------

_ident = st.from_regex(r"[A-Za-z0-9][A-Za-z0-9_.=-]{0,11}", fullmatch=True)
_scalar = st.text(min_size=1, max_size=16)
_map = st.dictionaries(_ident, _scalar, max_size=3)


@st.composite
def intents(draw):
    directives = draw(
        st.lists(
            st.builds(
                TargetDirective,
                _ident,
                _scalar,
                _scalar,
                _map,
                _map,
            ),
            min_size=1,
            max_size=4,
        )
    )
    priority = draw(st.none() | st.integers(min_value=0, max_value=10**6))
    return Intent(draw(_ident), tuple(directives), OPERATOR, priority)


@settings(max_examples=300, deadline=None)
@given(intents())
def test_round_trip_property(intent):
    assert parse_intent(serialize_intent(intent)) == intent


@settings(max_examples=200, deadline=None)
@given(intents())
def test_canonical_text_fixed_point(intent):
    text = serialize_intent(intent)
    assert serialize_intent(parse_intent(text)) == text


@settings(max_examples=200, deadline=None)
@given(intents(), st.sampled_from([Origin(), Origin.mlfo("OSS-01")]))
def test_canonical_bytes_round_trip(intent, origin):
    intent = Intent(intent.intent_id, intent.targets, origin, intent.priority)
    assert decode_canonical(encode_canonical(intent)) == intent
