"""Deterministic discrete-event harness for a hierarchy of orchestrators.

Time is logical. Every hop (message delivery, underlay lifecycle step) takes
one tick; events due at the same tick run in (actor order, insertion order).
No wall clock and no unseeded randomness: the same scenario always produces
the same trace bytes.
"""

from __future__ import annotations

import heapq
import logging
import os
import random
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

from .core import (
    ConflictResolved,
    DeployPipeline,
    MlfoAction,
    MlfoNode,
    Noop,
    RejectIntent,
    SendIntent,
    SendMonitoring,
    Teardown,
)
from .intent import Intent
from .interfaces import MessageKind, MonitoringEvent, MonitoringReport, Network
from .pipeline import PipelineInstance, PipelineState
from .scenario import Scenario, ScenarioError, Stimulus, build_nodes
from .trace import Trace, TraceEvent

__all__ = [
    "DEFAULT_STEP_LIMIT",
    "Simulation",
    "StepLimitExceeded",
    "Step",
    "qos_predictor_stub",
    "run",
]

log = logging.getLogger(__name__)

DEFAULT_STEP_LIMIT = 10_000


class StepLimitExceeded(RuntimeError):
    def __init__(self, limit: int, trace: Trace):
        super().__init__(f"no quiescence after {limit} steps")
        self.limit = limit
        self.trace = trace


def step_limit_from_env(default: int = DEFAULT_STEP_LIMIT) -> int:
    raw = os.environ.get("MLFO_STEP_LIMIT")
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ScenarioError(f"MLFO_STEP_LIMIT must be an integer, got {raw!r}") from None
    if value <= 0:
        raise ScenarioError("MLFO_STEP_LIMIT must be positive")
    return value


def qos_predictor_stub(pipeline: PipelineInstance, stimulus: Stimulus) -> Optional[MonitoringEvent]:
    """Scripted QoS forecast of an SLA-support pipeline.

    A public-user surge makes a Running SLA pipeline predict a QoS drop of the
    surge's ``expected_drop`` (default ``20%``). Anything else predicts nothing.
    """
    if pipeline.spec.purpose != "SLA" or pipeline.state is not PipelineState.RUNNING:
        return None
    if stimulus.kind != "public_user_surge":
        return None
    value = stimulus.data.get("expected_drop", "20%")
    return MonitoringEvent(pipeline.placement, stimulus.t, "ThresholdCrossover",
                           {"metric": "predicted_qos_drop", "value": value})


@dataclass
class Step:
    """One dispatched input and the actions the owning actor produced."""

    t: int
    domain: str
    kind: str
    message: Any
    actions: List[MlfoAction] = field(default_factory=list)


def _directives(intent: Intent) -> str:
    return "|".join(f"{d.target_id}:{d.operation}:{d.operand}" for d in intent.targets)


class Simulation:
    def __init__(self, scenario: Scenario, step_limit: Optional[int] = None):
        self.scenario = scenario
        self.topology = scenario.topology
        self.step_limit = step_limit if step_limit is not None else step_limit_from_env()
        self.network = Network(self.topology)
        self.nodes: Dict[str, MlfoNode] = build_nodes(scenario)
        self.trace = Trace()
        self.steps: List[Step] = []
        self.now = 0
        self._queue: List[Tuple[int, int, int, str, str, Any]] = []
        self._seq = 0
        self._rng = random.Random(scenario.seed)
        self._failures = list(scenario.failures)
        self._started = False

    # -- scheduling ------------------------------------------------------

    def _schedule(self, t: int, domain: str, kind: str, payload: Any = None) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (t, self.topology.order[domain], self._seq, domain, kind, payload))

    def _emit(self, domain: str, event: str, **details: Any) -> None:
        self.trace.append(TraceEvent(self.now, domain, event, {k: str(v) for k, v in details.items()}))

    # -- main loop -------------------------------------------------------

    def run(self) -> Trace:
        if self._started:
            raise RuntimeError("a Simulation runs once")
        self._started = True
        root = self.topology.root
        for inst in self.scenario.initial_pipelines:
            self._schedule(0, inst.placement, "initial", inst)
        for stim in self.scenario.stimuli:
            target = stim.domain if stim.kind in ("report", "event") else root
            self._schedule(stim.t, target, "stimulus", stim)
        steps = 0
        while self._queue:
            steps += 1
            if steps > self.step_limit:
                raise StepLimitExceeded(self.step_limit, self.trace)
            t, _, _, domain, kind, payload = heapq.heappop(self._queue)
            self.now = t
            node = self.nodes[domain]
            node.clock = t
            getattr(self, f"_on_{kind}")(node, payload)
        return self.trace

    def _record(self, node: MlfoNode, kind: str, message: Any, actions: List[MlfoAction]) -> None:
        self.steps.append(Step(self.now, node.domain, kind, message, list(actions)))
        self._execute(node, actions)

    def _on_initial(self, node: MlfoNode, inst: PipelineInstance) -> None:
        self._execute(node, [DeployPipeline(inst)])

    def _on_stimulus(self, node: MlfoNode, stim: Stimulus) -> None:
        if stim.kind == "intent":
            intent = stim.intent
            assert intent is not None
            self._emit(node.domain, "IntentReceived", intent_id=intent.intent_id, origin="operator",
                       sender="operator", directives=_directives(intent))
            self._record(node, "intent", intent, node.handle_intent(intent))
        elif stim.kind == "public_user_surge":
            for domain in self.topology.domains:
                host = self.nodes[domain]
                host.clock = self.now
                for inst in list(host.hosted()):
                    event = qos_predictor_stub(inst, stim)
                    if event is None:
                        continue
                    self._emit(domain, "MonitoringSent", kind=event.kind, scope="internal", recipient=domain,
                               pipeline_id=inst.pipeline_id, **event.attrs)
                    self._record(host, "monitoring", event, host.handle_monitoring(event))
        elif stim.kind in ("report", "event"):
            msg = stim.message
            assert msg is not None and node.parent is not None
            self._send_monitoring(node, msg, node.parent)
        else:
            raise ScenarioError(f"unknown stimulus kind {stim.kind!r}")

    def _on_deliver(self, node: MlfoNode, _: Any) -> None:
        env = self.network.receive(node.domain)
        assert env is not None, "delivery scheduled without an envelope"
        message = env.open()
        if env.kind is MessageKind.INTENT:
            assert isinstance(message, Intent)
            self._emit(node.domain, "IntentReceived", intent_id=message.intent_id, origin=message.origin.label,
                       sender=env.sender, seq=env.seq, directives=_directives(message))
            self._record(node, "intent", message, node.handle_intent(message))
        else:
            self._record(node, "monitoring", message, node.handle_monitoring(message))  # type: ignore[arg-type]

    def _on_underlay(self, node: MlfoNode, payload: Tuple[str, int, PipelineState]) -> None:
        pipeline_id, generation, state = payload
        before = node.find(pipeline_id, generation)
        actions = node.on_pipeline_state(pipeline_id, generation, state)
        after = node.find(pipeline_id, generation)
        if before is not None and after is not None:
            self._emit(node.domain, "PipelineStateChanged", pipeline_id=pipeline_id, generation=generation,
                       **{"from": before.state.value, "to": after.state.value},
                       offloaded=str(after.offloaded).lower(), owner=after.spec.owner_domain)
        self._record(node, "underlay", payload, actions)
        if after is not None and state is PipelineState.DEPLOYING:
            delay = 1 + (self._rng.randint(0, self.scenario.jitter) if self.scenario.jitter else 0)
            outcome = PipelineState.TERMINATED if self._take_failure(after) else PipelineState.RUNNING
            self._schedule(self.now + delay, node.domain, "underlay", (pipeline_id, generation, outcome))

    def _take_failure(self, inst: PipelineInstance) -> bool:
        for key in (f"{inst.pipeline_id}@{inst.generation}", inst.pipeline_id):
            if key in self._failures:
                self._failures.remove(key)
                return True
        return False

    # -- effects ---------------------------------------------------------

    def _execute(self, node: MlfoNode, actions: List[MlfoAction]) -> None:
        for action in actions:
            if isinstance(action, DeployPipeline):
                inst = action.instance
                self._emit(node.domain, "PipelineStateChanged", pipeline_id=inst.pipeline_id,
                           generation=inst.generation, **{"from": "", "to": inst.state.value},
                           offloaded=str(inst.offloaded).lower(), owner=inst.spec.owner_domain)
                self._schedule(self.now + 1, node.domain, "underlay",
                               (inst.pipeline_id, inst.generation, PipelineState.DEPLOYING))
            elif isinstance(action, Teardown):
                self._emit(node.domain, "PipelineStateChanged", pipeline_id=action.pipeline_id,
                           generation=action.generation, **{"from": "Running", "to": "TearingDown"},
                           offloaded=str(action.offloaded).lower(),
                           owner=node.find(action.pipeline_id, action.generation).spec.owner_domain)  # type: ignore[union-attr]
                self._schedule(self.now + 1, node.domain, "underlay",
                               (action.pipeline_id, action.generation, PipelineState.TERMINATED))
            elif isinstance(action, SendIntent):
                env = self.network.send(self.network.wrap(node.domain, action.to, action.intent))
                self._emit(node.domain, "IntentSent", intent_id=action.intent.intent_id, recipient=action.to,
                           seq=env.seq, origin=action.intent.origin.label,
                           directives=_directives(action.intent))
                self._schedule(self.now + 1, action.to, "deliver")
            elif isinstance(action, SendMonitoring):
                self._send_monitoring(node, action.message, action.to)
            elif isinstance(action, RejectIntent):
                self._emit(node.domain, "IntentRejected", intent_id=action.intent_id, reason=action.reason,
                           target_index="" if action.target_index is None else action.target_index)
            elif isinstance(action, ConflictResolved):
                self._emit(node.domain, "ConflictResolved", operand=action.operand, winner=action.winner,
                           incumbent=action.incumbent_intent, challenger=action.challenger_intent,
                           winner_origin=action.winner_origin)
            elif isinstance(action, Noop):
                log.debug("t=%d %s noop: %s", self.now, node.domain, action.reason)

    def _send_monitoring(self, node: MlfoNode, msg: Union[MonitoringReport, MonitoringEvent], to: str) -> None:
        env = self.network.send(self.network.wrap(node.domain, to, msg))
        details: Dict[str, Any] = {"recipient": to, "seq": env.seq, "scope": "interface"}
        if isinstance(msg, MonitoringEvent):
            details["kind"] = msg.kind
            details.update(msg.attrs)
        else:
            details["kind"] = "MonitoringReport"
        self._emit(node.domain, "MonitoringSent", **details)
        self._schedule(self.now + 1, to, "deliver")


def run(scenario: Scenario, step_limit: Optional[int] = None) -> Trace:
    """Run ``scenario`` to quiescence and return its trace."""
    return Simulation(scenario, step_limit).run()
