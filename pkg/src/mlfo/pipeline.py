"""ML pipelines as chains of logical nodes, with placement and lifecycle."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Iterable, List, NamedTuple, Optional, Tuple

from .intent import TargetDirective, check_domain_id

__all__ = [
    "LEGAL_TRANSITIONS",
    "STANDARD_CHAIN",
    "NodeKind",
    "PipelineInstance",
    "PipelineSpec",
    "PipelineState",
    "PlanError",
    "RedeployPlan",
    "TransitionError",
    "affected_pipelines",
    "redeploy_plan",
    "transition",
]


class NodeKind(str, enum.Enum):
    SOURCE = "Source"
    COLLECTOR = "Collector"
    PREPROCESSOR = "Preprocessor"
    MODEL = "Model"
    POLICY = "Policy"
    SINK = "Sink"


STANDARD_CHAIN: Tuple[NodeKind, ...] = tuple(NodeKind)


class PipelineState(str, enum.Enum):
    REQUESTED = "Requested"
    DEPLOYING = "Deploying"
    RUNNING = "Running"
    TEARING_DOWN = "TearingDown"
    TERMINATED = "Terminated"


S = PipelineState
LEGAL_TRANSITIONS = frozenset(
    {
        (S.REQUESTED, S.DEPLOYING),
        (S.DEPLOYING, S.RUNNING),
        (S.DEPLOYING, S.TERMINATED),  # deploy failure
        (S.RUNNING, S.TEARING_DOWN),
        (S.TEARING_DOWN, S.TERMINATED),
    }
)


class TransitionError(RuntimeError):
    def __init__(self, pipeline_id: str, frm: PipelineState, to: PipelineState):
        super().__init__(f"illegal transition {frm.value} -> {to.value} for pipeline {pipeline_id!r}")
        self.pipeline_id = pipeline_id
        self.frm = frm
        self.to = to


class PlanError(RuntimeError):
    pass


@dataclass(frozen=True)
class PipelineSpec:
    pipeline_id: str
    purpose: str
    owner_domain: str
    model_ref: str = "default"
    nodes: Tuple[NodeKind, ...] = STANDARD_CHAIN
    min_accuracy: Optional[float] = None

    def __post_init__(self) -> None:
        check_domain_id(self.owner_domain)
        if not self.pipeline_id or not self.purpose:
            raise ValueError("pipeline_id and purpose must be non-empty")
        nodes = tuple(NodeKind(n) for n in self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if not nodes or nodes[0] is not NodeKind.SOURCE or nodes[-1] is not NodeKind.SINK:
            raise ValueError(f"pipeline {self.pipeline_id!r} must run from Source to Sink")
        if nodes.count(NodeKind.MODEL) != 1:
            raise ValueError(f"pipeline {self.pipeline_id!r} must contain exactly one Model node")
        if self.min_accuracy is not None and not 0.0 <= self.min_accuracy <= 1.0:
            raise ValueError("min_accuracy must lie in [0, 1]")


@dataclass(frozen=True)
class PipelineInstance:
    spec: PipelineSpec
    placement: str
    state: PipelineState = PipelineState.REQUESTED
    generation: int = 0

    def __post_init__(self) -> None:
        check_domain_id(self.placement)
        object.__setattr__(self, "state", PipelineState(self.state))

    @property
    def pipeline_id(self) -> str:
        return self.spec.pipeline_id

    @property
    def offloaded(self) -> bool:
        return self.placement != self.spec.owner_domain

    @property
    def active(self) -> bool:
        return self.state is not PipelineState.TERMINATED


def transition(instance: PipelineInstance, to: PipelineState) -> PipelineInstance:
    to = PipelineState(to)
    if (instance.state, to) not in LEGAL_TRANSITIONS:
        raise TransitionError(instance.pipeline_id, instance.state, to)
    return replace(instance, state=to)


def affected_pipelines(
    pipelines: Iterable[PipelineInstance], directive: TargetDirective
) -> List[PipelineInstance]:
    """Instances a directive acts on, in input order.

    ``ml_offload`` selects by the offloading relationship (offloaded instances
    owned by the target domain); any other operand selects by purpose.
    """
    if directive.operand == "ml_offload":
        return [p for p in pipelines if p.offloaded and p.spec.owner_domain == directive.target_id]
    return [p for p in pipelines if p.spec.purpose == directive.operand]


class RedeployPlan(NamedTuple):
    deploy: PipelineInstance
    teardown_target: PipelineInstance


def redeploy_plan(instance: PipelineInstance, new_placement: str) -> RedeployPlan:
    """Make-before-break move: a fresh Requested instance plus the one to retire.

    The caller must not tear down ``teardown_target`` before ``deploy`` is Running.
    """
    if instance.state is not PipelineState.RUNNING:
        raise PlanError(f"pipeline {instance.pipeline_id!r} is {instance.state.value}, not Running")
    if new_placement == instance.placement:
        raise PlanError(f"pipeline {instance.pipeline_id!r} already runs at {new_placement}")
    fresh = PipelineInstance(instance.spec, check_domain_id(new_placement), PipelineState.REQUESTED,
                             instance.generation + 1)
    return RedeployPlan(fresh, instance)
