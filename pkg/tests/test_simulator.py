import random

import pytest
import yaml

from mlfo.interfaces import privacy_filter
from mlfo.pipeline import PipelineInstance, PipelineSpec, PipelineState
from mlfo.scenario import (
    ScenarioError,
    Stimulus,
    builtin_document,
    load_scenario,
    scenario_from_dict,
    smart_factory,
    smart_factory_variant,
)
from mlfo.simulator import (
    DEFAULT_STEP_LIMIT,
    Simulation,
    StepLimitExceeded,
    qos_predictor_stub,
    run,
    step_limit_from_env,
)
from mlfo.trace import Trace, TraceEvent, check_trace, parse_assertion

from helpers import DATA, EDGE, FACTORY, OSS, direction_violations, teardown_violations

GOLDEN = (DATA / "smart_factory.trace.ndjson").read_text(encoding="utf-8")


def test_golden_trace_bytes():
    assert run(smart_factory()).to_ndjson() == GOLDEN


def test_repeat_runs_identical():
    assert run(smart_factory()).to_ndjson() == run(smart_factory()).to_ndjson()


def test_trace_ordering_key():
    trace = run(smart_factory())
    times = [ev.t for ev in trace]
    assert times == sorted(times)


def test_trace_ndjson_round_trip():
    trace = Trace.from_ndjson(GOLDEN)
    assert trace.to_ndjson() == GOLDEN
    assert len(trace) == 27


def test_no_stimuli_only_initial_deploys():
    scen = smart_factory()
    scen.stimuli = []
    trace = run(scen)
    assert {ev.event for ev in trace} == {"PipelineStateChanged"}
    assert [ev.details["to"] for ev in trace if ev.details["pipeline_id"] == "inference-1"] == [
        "Requested", "Deploying", "Running"]


def test_end_state():
    sim = Simulation(smart_factory())
    sim.run()
    edge, factory = sim.nodes[EDGE], sim.nodes[FACTORY]
    for node in sim.nodes.values():
        for p in node.hosted():
            assert p.state in (PipelineState.RUNNING, PipelineState.TERMINATED)
    assert not any(p.offloaded and p.active for p in edge.hosted())
    running_local = [p.pipeline_id for p in factory.hosted() if p.state is PipelineState.RUNNING]
    assert sorted(running_local) == ["inference-1", "inference-2"]


def test_quiescence_well_under_limit():
    sim = Simulation(smart_factory())
    sim.run()
    assert len(sim.steps) < DEFAULT_STEP_LIMIT // 100


def test_one_operator_intent():
    trace = run(smart_factory())
    assert check_trace(trace, ["count IntentReceived{origin=operator} == 1",
                               "never IntentSent@Factory-01"]).ok


def test_teardown_waits_for_notice():
    sim = Simulation(smart_factory())
    trace = sim.run()
    assert teardown_violations(sim) == []
    for pid in ("inference-1", "inference-2"):
        a = (f"MonitoringSent@{FACTORY}{{kind=RedeploymentNotice,pipeline_id={pid}}} before "
             f"PipelineStateChanged@{EDGE}{{pipeline_id={pid},to=TearingDown}}")
        assert check_trace(trace, [a]).ok


def test_delivered_envelopes_obey_rules():
    sim = Simulation(smart_factory())
    sim.run()
    assert direction_violations(sim) == []
    for env in sim.network.delivered:
        privacy_filter(env.payload, env.kind)
    # exactly-once: per channel seqs are 1..n
    seqs = {}
    for env in sim.network.delivered:
        seqs.setdefault((env.sender, env.recipient), []).append(env.seq)
    for got in seqs.values():
        assert got == list(range(1, len(got) + 1))


# --- livelock -----------------------------------------------------------------


def _ping_pong():
    doc = builtin_document()
    doc["initial_pipelines"] = []
    doc["rules"] = {
        EDGE: [{"rule_id": "poke", "trigger": "event", "event_kind": "ThresholdCrossover", "to": FACTORY,
                "targets": [{"id": FACTORY, "operation": "maximise", "operand": "capacity"}]}],
        FACTORY: [{"rule_id": "echo", "trigger": "intent", "operation": "maximise", "to": EDGE, "emit": "event",
                   "event_kind_out": "ThresholdCrossover", "attrs": {"metric": "capacity"}}],
    }
    doc["stimuli"] = [{"t": 0, "event": {"domain": FACTORY, "kind": "ThresholdCrossover", "attrs": {}}}]
    return scenario_from_dict(doc)


def test_livelock_hits_step_limit():
    with pytest.raises(StepLimitExceeded) as info:
        run(_ping_pong(), step_limit=500)
    assert info.value.limit == 500
    assert len(info.value.trace) > 100


def test_step_limit_from_env(monkeypatch):
    monkeypatch.delenv("MLFO_STEP_LIMIT", raising=False)
    assert step_limit_from_env() == DEFAULT_STEP_LIMIT
    monkeypatch.setenv("MLFO_STEP_LIMIT", "42")
    assert step_limit_from_env() == 42
    monkeypatch.setenv("MLFO_STEP_LIMIT", "many")
    with pytest.raises(ScenarioError):
        step_limit_from_env()


# --- the QoS predictor stub ---------------------------------------------------


def _predictor(state):
    return PipelineInstance(PipelineSpec("qos-prediction", "SLA", OSS), OSS, state)


def test_predictor_on_surge():
    ev = qos_predictor_stub(_predictor(PipelineState.RUNNING), Stimulus(5, "public_user_surge", data={"expected_drop": "20%"}))
    assert ev.kind == "ThresholdCrossover"
    assert ev.attrs == {"metric": "predicted_qos_drop", "value": "20%"}


def test_predictor_default_drop():
    ev = qos_predictor_stub(_predictor(PipelineState.RUNNING), Stimulus(5, "public_user_surge"))
    assert ev.attrs["value"] == "20%"


def test_predictor_not_running():
    assert qos_predictor_stub(_predictor(PipelineState.DEPLOYING), Stimulus(5, "public_user_surge")) is None


def test_predictor_other_stimulus():
    assert qos_predictor_stub(_predictor(PipelineState.RUNNING), Stimulus(5, "report", OSS)) is None


def test_surge_before_predictor_runs_is_ignored():
    scen = smart_factory()
    scen.stimuli = [scen.stimuli[0], Stimulus(1, "public_user_surge", data={"expected_drop": "20%"})]
    trace = run(scen)
    assert not any(ev.event == "IntentSent" for ev in trace)


# --- deploy failure -----------------------------------------------------------


def test_local_deploy_failure_keeps_offloaded_instance():
    scen = smart_factory()
    scen.failures = ("inference-1@1",)
    sim = Simulation(scen)
    trace = sim.run()
    assert check_trace(trace, [
        f"PipelineStateChanged@{FACTORY}{{pipeline_id=inference-1,generation=1,from=Deploying,to=Terminated}}",
        f"MonitoringSent@{FACTORY}{{kind=Failure,purpose=ml_inference}}",
        f"never PipelineStateChanged@{EDGE}{{pipeline_id=inference-1,to=TearingDown}}",
    ]).ok
    edge_inst = sim.nodes[EDGE].find("inference-1")
    assert edge_inst.state is PipelineState.RUNNING


# --- randomised variants ------------------------------------------------------


@pytest.mark.parametrize("seed", range(20))
def test_variants_hold_invariants(seed):
    sim = Simulation(smart_factory_variant(seed))
    sim.run()
    assert teardown_violations(sim) == []
    assert direction_violations(sim) == []
    factory_running = {p.pipeline_id for p in sim.nodes[FACTORY].hosted() if p.state is PipelineState.RUNNING}
    offloaded = {p.pipeline_id for p in sim.scenario.initial_pipelines}
    assert factory_running == offloaded


def test_variant_is_seed_deterministic():
    assert run(smart_factory_variant(5)).to_ndjson() == run(smart_factory_variant(5)).to_ndjson()


def test_variant_pipeline_counts():
    counts = {len(smart_factory_variant(s).initial_pipelines) for s in range(60)}
    assert counts == {1, 2, 3, 4, 5}


# --- scenario loading ---------------------------------------------------------


def test_unknown_rule_key_rejected():
    doc = builtin_document()
    doc["rules"][OSS][0]["on"] = "event"
    with pytest.raises(ScenarioError):
        scenario_from_dict(doc)


def test_unordered_stimuli_rejected():
    doc = builtin_document()
    doc["stimuli"] = list(reversed(doc["stimuli"]))
    with pytest.raises(ScenarioError):
        scenario_from_dict(doc)


def test_rule_to_non_child_rejected():
    doc = builtin_document()
    doc["rules"][OSS][0]["to"] = FACTORY
    with pytest.raises(ScenarioError):
        Simulation(scenario_from_dict(doc))


def test_unknown_builtin():
    with pytest.raises(ScenarioError):
        load_scenario("no_such_scenario")


def test_load_from_file(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text(yaml.safe_dump(builtin_document()), encoding="utf-8")
    assert run(load_scenario(path)).to_ndjson() == GOLDEN


# --- check_trace --------------------------------------------------------------


def test_check_trace_examples():
    trace = Trace.from_ndjson(GOLDEN)
    report = check_trace(trace, [
        "MonitoringSent{kind=RedeploymentNotice} before PipelineStateChanged{to=TearingDown}",
        "never IntentSent@Factory-01",
        "count PipelineStateChanged{to=Terminated} >= 2",
        "IntentReceived@OSS-01{intent_id=intent_a} ; IntentSent@Edge-*{intent_id=intent_c}",
    ])
    assert report.ok, report.failures()


def _ev(t, event, **details):
    return TraceEvent(t, "X", event, details)


def test_precedence_counterexample_index():
    trace = [_ev(0, "A"), _ev(1, "B"), _ev(2, "C")]
    r = check_trace(trace, ["C before B"]).results[0]
    assert not r.passed and r.index == 1


def test_subsequence_failure_step():
    trace = [_ev(0, "A"), _ev(1, "B")]
    r = check_trace(trace, ["B ; A"]).results[0]
    assert not r.passed and r.index == 1


def test_absence_and_count_failures():
    trace = [_ev(0, "A"), _ev(1, "A")]
    never, count = check_trace(trace, ["never A", "count A < 2"]).results
    assert (never.passed, never.index) == (False, 0)
    assert not count.passed


def test_bad_assertion_syntax():
    with pytest.raises(ValueError):
        parse_assertion("A{x}")


def _independent_precedence(trace, first, then):
    # first index where `then` happens with no earlier `first`, or None
    for i, ev in enumerate(trace):
        if then(ev):
            if not any(first(e) for e in trace[:i]):
                return i
    return None


def test_permuted_golden_trace_detected():
    golden = list(Trace.from_ndjson(GOLDEN))
    assertion = ("MonitoringSent{kind=RedeploymentNotice,pipeline_id=inference-1} before "
                 "PipelineStateChanged@Edge-*{pipeline_id=inference-1,to=TearingDown}")
    first = lambda e: e.event == "MonitoringSent" and e.details.get("kind") == "RedeploymentNotice" \
        and e.details.get("pipeline_id") == "inference-1"
    then = lambda e: e.event == "PipelineStateChanged" and e.domain == EDGE \
        and e.details.get("pipeline_id") == "inference-1" and e.details.get("to") == "TearingDown"
    rng = random.Random(0)
    detected = 0
    for _ in range(300):
        perm = golden[:]
        rng.shuffle(perm)
        want = _independent_precedence(perm, first, then)
        got = check_trace(perm, [assertion]).results[0]
        assert got.passed == (want is None)
        assert got.index == want
        detected += want is not None
    assert detected > 50


def test_swapping_notice_and_teardown_fails():
    golden = list(Trace.from_ndjson(GOLDEN))
    i = next(k for k, e in enumerate(golden) if e.details.get("kind") == "RedeploymentNotice")
    j = next(k for k, e in enumerate(golden) if e.details.get("to") == "TearingDown")
    golden[i], golden[j] = golden[j], golden[i]
    r = check_trace(golden, ["MonitoringSent{kind=RedeploymentNotice} before PipelineStateChanged{to=TearingDown}"])
    assert not r.ok
    assert r.results[0].index == i
