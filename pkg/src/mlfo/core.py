"""The per-domain orchestrator (MLFO) actor.

An :class:`MlfoNode` owns its pipelines and requirements and reacts to three
kinds of input: intents from its parent, monitoring from its children (or its
own pipelines), and lifecycle updates from the underlay. Each handler returns
a list of actions; executing them is the caller's job, which keeps the node
deterministic and easy to test.
"""

from __future__ import annotations

import copy
import enum
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

from .intent import (
    DEFAULT_VOCABULARY,
    Intent,
    Origin,
    TargetDirective,
    Vocabulary,
)
from .interfaces import MonitoringEvent, MonitoringReport
from .pipeline import (
    PipelineInstance,
    PipelineSpec,
    PipelineState,
    affected_pipelines,
    redeploy_plan,
    transition,
)

__all__ = [
    "Claim",
    "ConflictPolicy",
    "ConflictResolved",
    "DeployPipeline",
    "DerivationRule",
    "MlfoAction",
    "MlfoNode",
    "Noop",
    "RejectIntent",
    "SendIntent",
    "SendMonitoring",
    "Teardown",
    "TemplateError",
    "Winner",
    "derive_intent",
    "handle_intent",
    "handle_monitoring",
    "parse_fraction",
    "resolve_conflict",
    "select_model",
]

OPERATOR_RANK = -1  # the operator sits above the root orchestrator


class TemplateError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Actions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DeployPipeline:
    instance: PipelineInstance

    @property
    def pipeline_id(self) -> str:
        return self.instance.pipeline_id


@dataclass(frozen=True)
class Teardown:
    pipeline_id: str
    generation: int
    offloaded: bool = False


@dataclass(frozen=True)
class SendIntent:
    intent: Intent
    to: str


@dataclass(frozen=True)
class SendMonitoring:
    message: Union[MonitoringReport, MonitoringEvent]
    to: str


@dataclass(frozen=True)
class RejectIntent:
    intent_id: str
    reason: str  # unknown-target | conflict-loss | unknown-operation | operator-not-root
    target_index: Optional[int] = None


@dataclass(frozen=True)
class Noop:
    reason: str


@dataclass(frozen=True)
class ConflictResolved:
    operand: str
    winner: str  # "incumbent" | "challenger"
    incumbent_intent: str
    challenger_intent: str
    winner_origin: str


MlfoAction = Union[DeployPipeline, Teardown, SendIntent, SendMonitoring, RejectIntent, Noop, ConflictResolved]


# ---------------------------------------------------------------------------
# Conflict resolution
# ---------------------------------------------------------------------------


class Winner(str, enum.Enum):
    INCUMBENT = "incumbent"
    CHALLENGER = "challenger"


@dataclass(frozen=True)
class Claim:
    """A directive as enforced (or proposed) on a domain, with its provenance."""

    directive: TargetDirective
    origin: str
    rank: int
    priority: Optional[int] = None
    intent_id: str = ""


@dataclass(frozen=True)
class ConflictPolicy:
    static_preferences: Tuple[str, ...] = ()
    use_priority: bool = True
    use_rank: bool = True


def resolve_conflict(policy: ConflictPolicy, incumbent: Claim, challenger: Claim) -> Winner:
    """Pick the directive that stays in force.

    Identical (operation, oparams) is not a conflict and keeps the incumbent.
    Otherwise the first deciding criterion wins: position in the static
    preference list (unlisted origins rank last), then lower hierarchy rank,
    then higher priority (absent counts as 0). A full tie goes to the
    challenger, so the latest intent prevails.
    """
    if incumbent.directive.same_effect(challenger.directive):
        return Winner.INCUMBENT
    prefs = list(policy.static_preferences)

    def pref(origin: str) -> int:
        return prefs.index(origin) if origin in prefs else len(prefs)

    pi, pc = pref(incumbent.origin), pref(challenger.origin)
    if pi != pc:
        return Winner.INCUMBENT if pi < pc else Winner.CHALLENGER
    if policy.use_rank and incumbent.rank != challenger.rank:
        return Winner.INCUMBENT if incumbent.rank < challenger.rank else Winner.CHALLENGER
    if policy.use_priority:
        qi, qc = incumbent.priority or 0, challenger.priority or 0
        if qi != qc:
            return Winner.INCUMBENT if qi > qc else Winner.CHALLENGER
    return Winner.CHALLENGER


# ---------------------------------------------------------------------------
# Derivation rules
# ---------------------------------------------------------------------------

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _fill(template: str, context: Mapping[str, str]) -> str:
    def sub(m: "re.Match[str]") -> str:
        name = m.group(1)
        if name not in context:
            raise TemplateError(f"unresolved placeholder {{{name}}}")
        return context[name]

    return _PLACEHOLDER.sub(sub, template)


@dataclass(frozen=True)
class DerivationRule:
    """Turns a trigger into a new intent for a child (or an escalation event).

    ``trigger`` is ``"intent"`` (matched per received directive on ``operation`` /
    ``operand``) or ``"event"`` (matched on ``event_kind``). Every key in
    ``match`` must equal the trigger's oparams/attrs value. With
    ``require_offloaded`` the rule only fires while this domain hosts
    pipelines offloaded from elsewhere.

    ``emit="intent"`` sends ``targets`` to the child ``to``; ``emit="event"``
    raises an ``event_kind_out`` event with ``attrs`` to the parent ``to``.
    Template strings may use ``{placeholders}`` filled from the trigger.
    """

    rule_id: str
    to: str
    trigger: str = "event"
    operation: Optional[str] = None
    operand: Optional[str] = None
    event_kind: Optional[str] = None
    match: Mapping[str, str] = field(default_factory=dict)
    require_offloaded: bool = False
    emit: str = "intent"
    targets: Tuple[Mapping[str, object], ...] = ()
    attrs: Mapping[str, str] = field(default_factory=dict)
    event_kind_out: str = "ThresholdCrossover"
    intent_id: Optional[str] = None
    priority: Optional[int] = None

    def __post_init__(self) -> None:
        if self.trigger not in ("intent", "event"):
            raise ValueError(f"rule {self.rule_id}: trigger must be intent or event")
        if self.emit not in ("intent", "event"):
            raise ValueError(f"rule {self.rule_id}: 'emit' must be intent or event")
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.emit == "intent" and not self.targets:
            raise ValueError(f"rule {self.rule_id}: an intent template needs targets")

    def matches(self, trigger: Union[MonitoringEvent, TargetDirective], hosts_offloaded: bool = False) -> bool:
        if self.require_offloaded and not hosts_offloaded:
            return False
        if isinstance(trigger, MonitoringEvent):
            if self.trigger != "event" or (self.event_kind and trigger.kind != self.event_kind):
                return False
            values: Mapping[str, str] = trigger.attrs
        else:
            if self.trigger != "intent":
                return False
            if self.operation and trigger.operation != self.operation:
                return False
            if self.operand and trigger.operand != self.operand:
                return False
            values = trigger.oparams
        return all(values.get(k) == v for k, v in self.match.items())


def trigger_context(trigger: Union[MonitoringEvent, Intent, TargetDirective],
                    directive: Optional[TargetDirective] = None) -> Dict[str, str]:
    if isinstance(trigger, MonitoringEvent):
        ctx = dict(trigger.attrs)
        ctx.update(kind=trigger.kind, source_domain=trigger.sender, at=str(trigger.at))
        return ctx
    if isinstance(trigger, Intent):
        d = directive or trigger.targets[0]
        ctx = trigger_context(d)
        ctx.update(intent_id=trigger.intent_id, source_domain=trigger.origin.label)
        return ctx
    ctx = dict(trigger.oparams)
    ctx.update(operation=trigger.operation, operand=trigger.operand, target_id=trigger.target_id)
    return ctx


def derive_intent(
    rule: DerivationRule,
    trigger: Union[MonitoringEvent, Intent, TargetDirective],
    fresh_id: str,
    domain: str,
    directive: Optional[TargetDirective] = None,
) -> Intent:
    """Instantiate ``rule``'s template as an MLFO intent issued by ``domain``."""
    ctx = trigger_context(trigger, directive)
    targets = []
    for tpl in rule.targets:
        try:
            targets.append(
                TargetDirective(
                    _fill(str(tpl["id"]), ctx),
                    _fill(str(tpl["operation"]), ctx),
                    _fill(str(tpl["operand"]), ctx),
                    {k: _fill(str(v), ctx) for k, v in dict(tpl.get("oparams") or {}).items()},  # type: ignore[union-attr]
                    {k: _fill(str(v), ctx) for k, v in dict(tpl.get("constraints") or {}).items()},  # type: ignore[union-attr]
                )
            )
        except KeyError as exc:
            raise TemplateError(f"rule {rule.rule_id}: template lacks {exc}") from None
    return Intent(fresh_id, tuple(targets), Origin.mlfo(domain), rule.priority)


# ---------------------------------------------------------------------------
# Model selection
# ---------------------------------------------------------------------------


def parse_fraction(text: str) -> float:
    """``"95%"`` -> 0.95, ``"0.95"`` -> 0.95."""
    s = text.strip()
    if s.endswith("%"):
        return float(s[:-1]) / 100.0
    return float(s)


def select_model(catalog: Sequence[PipelineSpec], directive: TargetDirective) -> Optional[PipelineSpec]:
    """First catalog entry serving the operand that meets any ``minaccuracy``."""
    wanted = directive.oparams.get("minaccuracy")
    floor = parse_fraction(wanted) if wanted is not None else None
    for spec in catalog:
        if spec.purpose != directive.operand:
            continue
        if floor is not None and (spec.min_accuracy is None or spec.min_accuracy < floor):
            continue
        return spec
    return None


# ---------------------------------------------------------------------------
# The actor
# ---------------------------------------------------------------------------


@dataclass
class MlfoNode:
    domain: str
    rank: int = 0
    parent: Optional[str] = None
    children: Tuple[str, ...] = ()
    routes: Dict[str, str] = field(default_factory=dict)  # descendant -> child on its path
    catalog: List[PipelineSpec] = field(default_factory=list)
    pipelines: List[PipelineInstance] = field(default_factory=list)
    rules: List[DerivationRule] = field(default_factory=list)
    policy: ConflictPolicy = field(default_factory=ConflictPolicy)
    vocabulary: Vocabulary = DEFAULT_VOCABULARY
    pending: Deque[Intent] = field(default_factory=deque)
    active_requirements: Dict[str, Claim] = field(default_factory=dict)
    expectations: Dict[str, Dict[str, str]] = field(default_factory=dict)
    analytics: List[Union[MonitoringReport, MonitoringEvent]] = field(default_factory=list)
    # pipeline_id -> remote instance retired once the local replacement runs
    awaiting_local: Dict[str, PipelineInstance] = field(default_factory=dict)
    # redeployment notices that arrived before the offloaded instance was Running
    deferred_teardowns: Set[str] = field(default_factory=set)
    clock: int = 0
    _issued: Dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if (self.parent is None) != (self.rank == 0):
            raise ValueError(f"{self.domain}: parent must be absent exactly at rank 0")
        self.children = tuple(self.children)
        for child in self.children:
            self.routes.setdefault(child, child)
        for rule in self.rules:
            self._check_rule(rule)

    def _check_rule(self, rule: DerivationRule) -> None:
        if rule.emit == "intent" and rule.to not in self.children:
            raise ValueError(f"{self.domain}: rule {rule.rule_id} sends intents to non-child {rule.to}")
        if rule.emit == "event" and rule.to != self.parent:
            raise ValueError(f"{self.domain}: rule {rule.rule_id} raises events to non-parent {rule.to}")

    # -- queries ---------------------------------------------------------

    def hosted(self) -> List[PipelineInstance]:
        return [p for p in self.pipelines if p.placement == self.domain]

    def hosts_offloaded(self) -> bool:
        return any(p.offloaded and p.active for p in self.hosted())

    def find(self, pipeline_id: str, generation: Optional[int] = None,
             hosted_only: bool = True) -> Optional[PipelineInstance]:
        for p in self.pipelines:
            if p.pipeline_id != pipeline_id or (hosted_only and p.placement != self.domain):
                continue
            if generation is None or p.generation == generation:
                if generation is None and not p.active:
                    continue
                return p
        return None

    def _replace(self, old: PipelineInstance, new: PipelineInstance) -> None:
        self.pipelines[self.pipelines.index(old)] = new

    def _fresh_id(self, base: str) -> str:
        n = self._issued.get(base, 0) + 1
        self._issued[base] = n
        return base if n == 1 else f"{base}-{n}"

    def _origin_rank(self, origin: Origin) -> int:
        if origin.is_operator:
            return OPERATOR_RANK
        return self.rank - 1

    # -- intents ---------------------------------------------------------

    def enqueue(self, intent: Intent) -> None:
        self.pending.append(intent)

    def drain(self) -> List[MlfoAction]:
        actions: List[MlfoAction] = []
        while self.pending:
            actions.extend(self.handle_intent(self.pending.popleft()))
        return actions

    def handle_intent(self, intent: Intent) -> List[MlfoAction]:
        """Interpret ``intent``: apply local directives, forward the rest downward."""
        if intent.origin.is_operator and self.rank != 0:
            return [RejectIntent(intent.intent_id, "operator-not-root")]
        actions: List[MlfoAction] = []
        forwards: Dict[str, List[TargetDirective]] = {}
        for idx, d in enumerate(intent.targets):
            if d.target_id == self.domain:
                actions.extend(self._apply(intent, idx, d))
            elif d.target_id in self.routes:
                forwards.setdefault(self.routes[d.target_id], []).append(d)
            else:
                actions.append(RejectIntent(intent.intent_id, "unknown-target", idx))
        for hop, directives in forwards.items():
            fwd = Intent(intent.intent_id, tuple(directives), Origin.mlfo(self.domain), intent.priority)
            actions.append(SendIntent(fwd, hop))
        return actions or [Noop("nothing-to-do")]

    def _apply(self, intent: Intent, idx: int, d: TargetDirective) -> List[MlfoAction]:
        if self.vocabulary.strict and d.operation not in self.vocabulary.known_operations:
            return [RejectIntent(intent.intent_id, "unknown-operation", idx)]
        actions: List[MlfoAction] = []
        claim = Claim(d, intent.origin.label, self._origin_rank(intent.origin), intent.priority, intent.intent_id)
        incumbent = self.active_requirements.get(d.operand)
        if incumbent is not None and not incumbent.directive.same_effect(d):
            winner = resolve_conflict(self.policy, incumbent, claim)
            kept = incumbent if winner is Winner.INCUMBENT else claim
            actions.append(ConflictResolved(d.operand, winner.value, incumbent.intent_id,
                                            intent.intent_id, kept.origin))
            if winner is Winner.INCUMBENT:
                actions.append(RejectIntent(intent.intent_id, "conflict-loss", idx))
                return actions
        self.active_requirements[d.operand] = claim

        if d.operation == "maintain":
            actions.extend(self._maintain(d))
        elif d.operation == "anticipate":
            self.expectations[d.operand] = dict(d.oparams)
        elif d.operation == "stop":
            actions.extend(self._stop(d))

        actions.extend(self._fire(d, intent))
        if not any(not isinstance(a, ConflictResolved) for a in actions):
            actions.append(Noop("requirement-recorded"))
        return actions

    def _maintain(self, d: TargetDirective) -> List[MlfoAction]:
        if any(p.active and p.spec.purpose == d.operand for p in self.hosted()):
            return []
        spec = select_model(self.catalog, d)
        if spec is None:
            return [Noop(f"no-catalog-entry:{d.operand}")]
        if self.find(spec.pipeline_id, hosted_only=False) is not None:
            return []
        inst = PipelineInstance(spec, self.domain, PipelineState.REQUESTED, 0)
        self.pipelines.append(inst)
        return [DeployPipeline(inst)]

    def _stop(self, d: TargetDirective) -> List[MlfoAction]:
        actions: List[MlfoAction] = []
        if d.operand == "ml_offload":
            candidates = [p for p in self.pipelines if p.active]
            for view in affected_pipelines(candidates, d):
                if view.state is not PipelineState.RUNNING or view.pipeline_id in self.awaiting_local:
                    continue
                plan = redeploy_plan(view, self.domain)
                self._replace(view, plan.deploy)
                self.awaiting_local[view.pipeline_id] = plan.teardown_target
                actions.append(DeployPipeline(plan.deploy))
            return actions or [Noop("no-offloaded-pipelines")]
        for inst in affected_pipelines(self.hosted(), d):
            if inst.state is PipelineState.RUNNING:
                actions.append(self._teardown(inst))
        return actions

    def _teardown(self, inst: PipelineInstance) -> Teardown:
        self._replace(inst, transition(inst, PipelineState.TEARING_DOWN))
        return Teardown(inst.pipeline_id, inst.generation, inst.offloaded)

    def _fire(self, trigger: Union[MonitoringEvent, TargetDirective],
              intent: Optional[Intent] = None) -> List[MlfoAction]:
        actions: List[MlfoAction] = []
        offloaded = self.hosts_offloaded()
        for rule in self.rules:
            if not rule.matches(trigger, offloaded):
                continue
            if rule.emit == "event":
                ctx = trigger_context(intent, trigger) if intent is not None else trigger_context(trigger)
                attrs = {k: _fill(str(v), ctx) for k, v in rule.attrs.items()}
                event = MonitoringEvent(self.domain, self.clock, rule.event_kind_out, attrs)
                actions.append(SendMonitoring(event, rule.to))
                continue
            fresh = self._fresh_id(rule.intent_id or rule.rule_id)
            if intent is not None:
                derived = derive_intent(rule, intent, fresh, self.domain, trigger)  # type: ignore[arg-type]
            else:
                derived = derive_intent(rule, trigger, fresh, self.domain)
            actions.append(SendIntent(derived, rule.to))
        return actions

    # -- monitoring ------------------------------------------------------

    def handle_monitoring(self, msg: Union[MonitoringReport, MonitoringEvent]) -> List[MlfoAction]:
        """React to a report or event from a child or from a local pipeline."""
        if msg.sender != self.domain and msg.sender not in self.children:
            return [Noop("ignored-non-child")]
        self.analytics.append(msg)
        if isinstance(msg, MonitoringReport):
            return [Noop("recorded")]
        actions: List[MlfoAction] = []
        if msg.kind == "RedeploymentNotice":
            actions.extend(self._on_redeployed(msg.attrs["pipeline_id"]))
        actions.extend(self._fire(msg))
        return actions or [Noop("recorded")]

    def _on_redeployed(self, pipeline_id: str) -> List[MlfoAction]:
        inst = next(
            (p for p in self.hosted() if p.pipeline_id == pipeline_id and p.offloaded and p.active), None
        )
        if inst is None:
            return [Noop(f"unknown-pipeline:{pipeline_id}")]
        if inst.state is PipelineState.RUNNING:
            return [self._teardown(inst)]
        if inst.state is PipelineState.TEARING_DOWN:
            return [Noop("already-tearing-down")]
        self.deferred_teardowns.add(pipeline_id)
        return [Noop("teardown-deferred")]

    # -- underlay --------------------------------------------------------

    def on_pipeline_state(self, pipeline_id: str, generation: int, state: PipelineState) -> List[MlfoAction]:
        """Apply a lifecycle update reported by the underlay for a hosted instance."""
        inst = self.find(pipeline_id, generation)
        if inst is None:
            return [Noop(f"unknown-pipeline:{pipeline_id}")]
        new = transition(inst, state)
        self._replace(inst, new)
        actions: List[MlfoAction] = []
        if new.state is PipelineState.RUNNING:
            if pipeline_id in self.awaiting_local and not new.offloaded:
                del self.awaiting_local[pipeline_id]
                notice = MonitoringEvent(self.domain, self.clock, "RedeploymentNotice", {"pipeline_id": pipeline_id})
                if self.parent is not None:
                    actions.append(SendMonitoring(notice, self.parent))
            if pipeline_id in self.deferred_teardowns and new.offloaded:
                self.deferred_teardowns.discard(pipeline_id)
                actions.append(self._teardown(new))
        elif new.state is PipelineState.TERMINATED and inst.state is PipelineState.DEPLOYING:
            remote = self.awaiting_local.pop(pipeline_id, None)
            if remote is not None:
                # local replacement failed; the remote instance keeps serving
                self.pipelines.append(remote)
            if self.parent is not None:
                failure = MonitoringEvent(self.domain, self.clock, "Failure", {"purpose": new.spec.purpose})
                actions.append(SendMonitoring(failure, self.parent))
        return actions


# ---------------------------------------------------------------------------
# Functional forms
# ---------------------------------------------------------------------------


def handle_intent(node: MlfoNode, intent: Intent) -> Tuple[MlfoNode, List[MlfoAction]]:
    """Pure form of :meth:`MlfoNode.handle_intent`; ``node`` is left untouched."""
    new = copy.deepcopy(node)
    return new, new.handle_intent(intent)


def handle_monitoring(node: MlfoNode, msg: Union[MonitoringReport, MonitoringEvent]) -> Tuple[MlfoNode, List[MlfoAction]]:
    new = copy.deepcopy(node)
    return new, new.handle_monitoring(msg)


def targets_of(actions: Iterable[MlfoAction]) -> List[Tuple[str, str]]:
    """(action type, destination) for every send action."""
    out = []
    for a in actions:
        if isinstance(a, SendIntent):
            out.append(("intent", a.to))
        elif isinstance(a, SendMonitoring):
            out.append(("monitoring", a.to))
    return out
