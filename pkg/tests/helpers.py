import json
import random
from pathlib import Path

from mlfo.intent import Origin, parse_intent
from mlfo.interfaces import FORBIDDEN_KEYS, MessageKind, MonitoringEvent, MonitoringReport, encode_message

DATA = Path(__file__).parent / "data"

SMART_FACTORY_DOMAINS = {"OSS-01", "Edge-smart-factory-01", "Factory-01"}
OSS, EDGE, FACTORY = "OSS-01", "Edge-smart-factory-01", "Factory-01"


def intent_text(name: str) -> str:
    """Reference intents of the smart-factory workflow, stored verbatim."""
    return (DATA / f"intent_{name}.yaml").read_text(encoding="utf-8")


# --- privacy fuzzing ------------------------------------------------------------

_JUNK_VALUES = ["x", "", 0, 1.5, True, None, [], {}, ["Source", "Model", "Sink"], {"OSS-01": "root"}]


def fuzz_seed_messages():
    """Valid messages of every kind, as (kind, decoded JSON object)."""
    msgs = [
        parse_intent(intent_text("a")),
        parse_intent(intent_text("b"), Origin.mlfo(OSS)),
        parse_intent(intent_text("c"), Origin.mlfo(EDGE)),
        MonitoringReport(FACTORY, 4, {"model_accuracy": "97%", "resource_utilisation": "40%",
                                      "available_resources": "8 vCPU"}),
        MonitoringEvent(OSS, 5, "ThresholdCrossover", {"metric": "predicted_qos_drop", "value": "20%"}),
        MonitoringEvent(FACTORY, 9, "RedeploymentNotice", {"pipeline_id": "inference-1"}),
        MonitoringEvent(FACTORY, 9, "Failure", {"purpose": "ml_inference"}),
    ]
    out = []
    for m in msgs:
        kind = MessageKind.INTENT if not isinstance(m, (MonitoringReport, MonitoringEvent)) else (
            MessageKind.REPORT if isinstance(m, MonitoringReport) else MessageKind.EVENT)
        out.append((kind, json.loads(encode_message(m))))
    return out


def _containers(obj, path=()):
    """Every dict inside obj, with its path."""
    if isinstance(obj, dict):
        yield path, obj
        for k, v in obj.items():
            yield from _containers(v, path + (k,))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _containers(v, path + (i,))


def inject_forbidden(rng: random.Random):
    """One fuzz case: (kind, payload bytes, injected key)."""
    seeds = fuzz_seed_messages()
    kind, obj = seeds[rng.randrange(len(seeds))]
    key = rng.choice(sorted(FORBIDDEN_KEYS))
    spots = [(p, d) for p, d in _containers(obj) if not (key in d and p == ("attrs",))]
    path, target = spots[rng.randrange(len(spots))]
    value = rng.choice(_JUNK_VALUES)
    if rng.random() < 0.3:
        # nest it one level deeper under an innocent-looking key
        target["extra"] = {key: value}
    else:
        target[key] = value
    return kind, json.dumps(obj, separators=(",", ":")).encode(), key


# --- run-level invariants -------------------------------------------------------


def teardown_violations(sim):
    """Teardowns of offloaded instances not preceded by handling their notice.

    Walks the recorded actor steps in execution order. A notice counts as
    handled from the step in which the receiving actor processed it.
    """
    from mlfo.core import Teardown
    from mlfo.interfaces import MonitoringEvent

    handled = set()
    bad = []
    for i, step in enumerate(sim.steps):
        msg = step.message
        if isinstance(msg, MonitoringEvent) and msg.kind == "RedeploymentNotice":
            handled.add((step.domain, msg.attrs["pipeline_id"]))
        for action in step.actions:
            if isinstance(action, Teardown) and action.offloaded:
                if (step.domain, action.pipeline_id) not in handled:
                    bad.append((i, step.domain, action.pipeline_id))
    return bad


def direction_violations(sim):
    """Delivered envelopes that do not go exactly one level down (intent) or up (monitoring)."""
    from mlfo.interfaces import MessageKind

    topo = sim.topology
    bad = []
    for env in sim.network.delivered:
        rs, rr = topo.rank(env.sender), topo.rank(env.recipient)
        if env.kind is MessageKind.INTENT:
            ok = rr == rs + 1 and topo.parent(env.recipient) == env.sender
        else:
            ok = rr == rs - 1 and topo.parent(env.sender) == env.recipient
        if not ok:
            bad.append(env)
    return bad
