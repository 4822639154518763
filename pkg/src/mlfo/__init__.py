"""Hierarchical orchestration of ML pipelines across network domains."""

from .core import ConflictPolicy, DerivationRule, MlfoNode, resolve_conflict
from .intent import (
    OPERATOR,
    Intent,
    Origin,
    TargetDirective,
    Vocabulary,
    decode_canonical,
    encode_canonical,
    parse_intent,
    serialize_intent,
    validate_intent,
)
from .pipeline import PipelineInstance, PipelineSpec, PipelineState
from .scenario import Scenario, load_scenario, smart_factory
from .simulator import Simulation, run
from .trace import Trace, TraceEvent, check_trace

__version__ = "0.1.0"
