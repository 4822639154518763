"""Scenario files: topology, catalogs, initial pipelines, rules, policies, stimuli.

Scenarios are YAML documents. Operator intents inside them are written in the
intent text format (as a block scalar) so they can be pasted verbatim.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import yaml

from .core import ConflictPolicy, DerivationRule, MlfoNode
from .intent import DEFAULT_VOCABULARY, OPERATOR, Intent, ParseError, Vocabulary, parse_intent
from .interfaces import EVENT_KINDS, MonitoringEvent, MonitoringReport
from .pipeline import PipelineInstance, PipelineSpec, PipelineState
from .topology import Topology, TopologyError

__all__ = [
    "BUILTIN_SCENARIOS",
    "Scenario",
    "ScenarioError",
    "Stimulus",
    "build_nodes",
    "load_scenario",
    "scenario_from_dict",
    "smart_factory",
    "smart_factory_variant",
]

BUILTIN_SCENARIOS = ("smart_factory",)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Stimulus:
    """Something injected from outside the orchestrators at logical time ``t``.

    kind is one of ``intent`` (operator intent to the root), ``public_user_surge``
    (network condition seen by running SLA pipelines), ``report`` or ``event``
    (a domain emits monitoring to its parent).
    """

    t: int
    kind: str
    domain: Optional[str] = None
    intent: Optional[Intent] = None
    data: Mapping[str, str] = field(default_factory=dict)
    message: Optional[Union[MonitoringReport, MonitoringEvent]] = None


@dataclass
class Scenario:
    name: str
    topology: Topology
    catalogs: Dict[str, List[PipelineSpec]] = field(default_factory=dict)
    initial_pipelines: List[PipelineInstance] = field(default_factory=list)
    rules: Dict[str, List[DerivationRule]] = field(default_factory=dict)
    policies: Dict[str, ConflictPolicy] = field(default_factory=dict)
    stimuli: List[Stimulus] = field(default_factory=list)
    seed: int = 0
    vocabulary: Vocabulary = DEFAULT_VOCABULARY
    jitter: int = 0  # max extra deploy ticks, drawn from ``seed``
    failures: Tuple[str, ...] = ()  # "pipeline_id" or "pipeline_id@generation" deployments that fail

    def __post_init__(self) -> None:
        times = [s.t for s in self.stimuli]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ScenarioError("stimuli must be ordered by time")
        if any(t < 0 for t in times):
            raise ScenarioError("stimulus times must be non-negative")
        domains = set(self.topology.domains)
        for name, mapping in (("catalogs", self.catalogs), ("rules", self.rules), ("policies", self.policies)):
            for d in mapping:
                if d not in domains:
                    raise ScenarioError(f"{name} names unknown domain {d!r}")
        for inst in self.initial_pipelines:
            for d in (inst.placement, inst.spec.owner_domain):
                if d not in domains:
                    raise ScenarioError(f"pipeline {inst.pipeline_id!r} names unknown domain {d!r}")
        ids = [p.pipeline_id for p in self.initial_pipelines]
        if len(ids) != len(set(ids)):
            raise ScenarioError("initial pipeline ids must be unique")
        for s in self.stimuli:
            if s.kind in ("report", "event") and self.topology.parent(s.domain) is None:  # type: ignore[arg-type]
                raise ScenarioError(f"{s.domain} has no parent to report to")


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _strs(mapping: Any, where: str) -> Dict[str, str]:
    if mapping is None:
        return {}
    if not isinstance(mapping, dict):
        raise ScenarioError(f"{where} must be a mapping")
    return {str(k): str(v) for k, v in mapping.items()}


def _spec(obj: Mapping[str, Any], owner: str) -> PipelineSpec:
    kwargs: Dict[str, Any] = {
        "pipeline_id": str(obj["pipeline_id"]),
        "purpose": str(obj["purpose"]),
        "owner_domain": str(obj.get("owner", owner)),
        "model_ref": str(obj.get("model_ref", "default")),
    }
    if "nodes" in obj:
        kwargs["nodes"] = tuple(obj["nodes"])
    if obj.get("min_accuracy") is not None:
        kwargs["min_accuracy"] = float(obj["min_accuracy"])
    return PipelineSpec(**kwargs)


_RULE_KEYS = frozenset({
    "rule_id", "to", "trigger", "operation", "operand", "event_kind", "match", "require_offloaded",
    "emit", "targets", "attrs", "event_kind_out", "intent_id", "priority",
})


def _rule(obj: Mapping[str, Any]) -> DerivationRule:
    unknown = [k for k in obj if k not in _RULE_KEYS]
    if unknown:
        raise ScenarioError(f"rule {obj.get('rule_id')!r} has unknown keys {unknown!r}")
    targets = []
    for t in obj.get("targets") or ():
        targets.append(
            {
                "id": str(t["id"]),
                "operation": str(t["operation"]),
                "operand": str(t["operand"]),
                "oparams": _strs(t.get("oparams"), "oparams"),
                "constraints": _strs(t.get("constraints"), "constraints"),
            }
        )
    return DerivationRule(
        rule_id=str(obj["rule_id"]),
        to=str(obj["to"]),
        trigger=str(obj.get("trigger", "event")),
        operation=obj.get("operation"),
        operand=obj.get("operand"),
        event_kind=obj.get("event_kind"),
        match=_strs(obj.get("match"), "match"),
        require_offloaded=bool(obj.get("require_offloaded", False)),
        emit=str(obj.get("emit", "intent")),
        targets=tuple(targets),
        attrs=_strs(obj.get("attrs"), "attrs"),
        event_kind_out=str(obj.get("event_kind_out", "ThresholdCrossover")),
        intent_id=obj.get("intent_id"),
        priority=obj.get("priority"),
    )


def _stimulus(obj: Mapping[str, Any]) -> Stimulus:
    t = int(obj["t"])
    if "intent" in obj:
        raw = obj["intent"]
        if not isinstance(raw, str):
            raise ScenarioError("operator intents are written in the intent text format")
        return Stimulus(t, "intent", intent=parse_intent(raw, OPERATOR))
    if "public_user_surge" in obj:
        return Stimulus(t, "public_user_surge", data=_strs(obj["public_user_surge"], "public_user_surge"))
    if "report" in obj:
        body = obj["report"]
        domain = str(body["domain"])
        return Stimulus(t, "report", domain, message=MonitoringReport(domain, t, _strs(body.get("metrics"), "metrics")))
    if "event" in obj:
        body = obj["event"]
        domain = str(body["domain"])
        kind = str(body["kind"])
        if kind not in EVENT_KINDS:
            raise ScenarioError(f"unknown event kind {kind!r}")
        return Stimulus(t, "event", domain, message=MonitoringEvent(domain, t, kind, _strs(body.get("attrs"), "attrs")))
    raise ScenarioError(f"stimulus at t={t} has no recognised kind")


def scenario_from_dict(doc: Mapping[str, Any]) -> Scenario:
    if not isinstance(doc, Mapping):
        raise ScenarioError("scenario must be a mapping")
    try:
        topology = Topology(
            (str(e["domain"]), None if e.get("parent") is None else str(e["parent"]), int(e["rank"]))
            for e in doc["topology"]
        )
        catalogs = {str(d): [_spec(s, str(d)) for s in specs or ()] for d, specs in (doc.get("catalogs") or {}).items()}
        initial = []
        for p in doc.get("initial_pipelines") or ():
            spec = _spec(p, str(p.get("owner", p.get("placement"))))
            initial.append(PipelineInstance(spec, str(p.get("placement", spec.owner_domain)), PipelineState.REQUESTED))
        rules = {str(d): [_rule(r) for r in rs or ()] for d, rs in (doc.get("rules") or {}).items()}
        policies = {
            str(d): ConflictPolicy(
                tuple(str(x) for x in (p or {}).get("static_preferences") or ()),
                bool((p or {}).get("use_priority", True)),
                bool((p or {}).get("use_rank", True)),
            )
            for d, p in (doc.get("policies") or {}).items()
        }
        stimuli = [_stimulus(s) for s in doc.get("stimuli") or ()]
        vocab_doc = doc.get("vocabulary") or {}
        vocabulary = DEFAULT_VOCABULARY.extended(vocab_doc.get("operations", ()), vocab_doc.get("operands", ()))
        if vocab_doc.get("strict"):
            vocabulary = Vocabulary(vocabulary.known_operations, vocabulary.known_operands, True)
        return Scenario(
            name=str(doc.get("name", "scenario")),
            topology=topology,
            catalogs=catalogs,
            initial_pipelines=initial,
            rules=rules,
            policies=policies,
            stimuli=stimuli,
            seed=int(doc.get("seed", 0)),
            vocabulary=vocabulary,
            jitter=int(doc.get("jitter", 0)),
            failures=tuple(str(f) for f in doc.get("failures") or ()),
        )
    except ScenarioError:
        raise
    except ParseError as exc:
        raise ScenarioError(f"stimulus intent: {exc}") from None
    except (KeyError, TypeError, ValueError, TopologyError) as exc:
        raise ScenarioError(f"malformed scenario: {exc!r}") from None


def load_scenario(source: Union[str, Path]) -> Scenario:
    """Load a scenario from a YAML file, or by builtin name (e.g. ``smart_factory``)."""
    path = Path(source)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
    elif str(source) in BUILTIN_SCENARIOS:
        text = resources.files("mlfo.scenarios").joinpath(f"{source}.yaml").read_text(encoding="utf-8")
    else:
        raise ScenarioError(f"no scenario file or builtin named {str(source)!r}")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"invalid YAML: {exc}") from None
    return scenario_from_dict(doc)


def smart_factory() -> Scenario:
    return load_scenario("smart_factory")


def builtin_document(name: str = "smart_factory") -> Dict[str, Any]:
    text = resources.files("mlfo.scenarios").joinpath(f"{name}.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text)


_NOISE_EVENTS = ("PolicyViolation", "SecurityViolation")


def smart_factory_variant(seed: int, pipelines: Optional[int] = None, noise: Optional[int] = None) -> Scenario:
    """Randomised smart-factory run for property checks.

    Varies the number of offloaded inference tasks (1-5), the surge time, the
    deploy jitter, and sprinkles benign monitoring traffic from the edge and
    the factory that no rule reacts to.
    """
    rng = random.Random(seed)
    doc = builtin_document()
    n = pipelines if pipelines is not None else rng.randint(1, 5)
    factory, edge = "Factory-01", "Edge-smart-factory-01"
    specs = [
        {"pipeline_id": f"inference-{i}", "purpose": "ml_inference", "model_ref": f"model-{i}",
         "min_accuracy": round(rng.uniform(0.95, 0.99), 3)}
        for i in range(1, n + 1)
    ]
    doc["catalogs"][factory] = specs
    doc["initial_pipelines"] = [dict(s, owner=factory, placement=edge) for s in specs]
    jitter = rng.randint(0, 4)
    # the predictor is Running by t = 2 + jitter; an earlier surge would go unseen
    surge_t = rng.randint(3 + jitter, 25)
    stimuli = [doc["stimuli"][0], {"t": surge_t, "public_user_surge": {"expected_drop": f"{rng.randint(5, 60)}%"}}]
    for _ in range(noise if noise is not None else rng.randint(0, 12)):
        t = rng.randint(0, 40)
        domain = rng.choice([edge, factory])
        if rng.random() < 0.5:
            stimuli.append({"t": t, "report": {"domain": domain, "metrics": {
                "model_accuracy": f"{rng.randint(80, 99)}%",
                "resource_utilisation": f"{rng.randint(5, 95)}%",
                "available_resources": f"{rng.randint(1, 64)} vCPU",
            }}})
        else:
            stimuli.append({"t": t, "event": {"domain": domain, "kind": rng.choice(_NOISE_EVENTS),
                                              "attrs": {"metric": "noise", "value": str(rng.randint(0, 9))}}})
    doc["stimuli"] = sorted(stimuli, key=lambda s: s["t"])
    doc["seed"] = seed
    doc["jitter"] = jitter
    doc["name"] = f"smart_factory_variant_{seed}"
    return scenario_from_dict(doc)


# ---------------------------------------------------------------------------
# Node construction
# ---------------------------------------------------------------------------


def build_nodes(scenario: Scenario) -> Dict[str, MlfoNode]:
    """One orchestrator per domain, in topology order."""
    topo = scenario.topology
    nodes: Dict[str, MlfoNode] = {}
    for domain in topo.domains:
        routes = {}
        for other in topo.domains:
            hop = topo.next_hop(domain, other)
            if hop is not None:
                routes[other] = hop
        pipelines = [
            p
            for p in scenario.initial_pipelines
            if p.placement == domain
        ] + [
            # owner's record of its tasks running elsewhere
            PipelineInstance(p.spec, p.placement, PipelineState.RUNNING, p.generation)
            for p in scenario.initial_pipelines
            if p.spec.owner_domain == domain and p.placement != domain
        ]
        try:
            nodes[domain] = MlfoNode(
                domain=domain,
                rank=topo.rank(domain),
                parent=topo.parent(domain),
                children=tuple(topo.children(domain)),
                routes=routes,
                catalog=list(scenario.catalogs.get(domain, [])),
                pipelines=pipelines,
                rules=list(scenario.rules.get(domain, [])),
                policy=scenario.policies.get(domain, ConflictPolicy()),
                vocabulary=scenario.vocabulary,
            )
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None
    return nodes
