import asyncio
import socket

import pytest

from mlfo.intent import Origin, parse_intent
from mlfo.interfaces import Envelope, MonitoringReport
from mlfo.live import LiveNode, parse_address
from mlfo.scenario import smart_factory
from mlfo.trace import check_trace

from helpers import EDGE, FACTORY, OSS, intent_text


def test_parse_address():
    assert parse_address("127.0.0.1:7000") == ("127.0.0.1", 7000)
    assert parse_address(":7000") == ("127.0.0.1", 7000)
    with pytest.raises(ValueError):
        parse_address("localhost")


def test_parent_required_below_root():
    async def build():
        with pytest.raises(ValueError):
            LiveNode(smart_factory(), EDGE, ("127.0.0.1", 0))
        with pytest.raises(ValueError):
            LiveNode(smart_factory(), OSS, ("127.0.0.1", 0), ("127.0.0.1", 1))

    asyncio.run(build())


async def _three_nodes(tick, settle):
    scen = smart_factory()
    oss = LiveNode(scen, OSS, ("127.0.0.1", 0), tick=tick)
    await oss.start()
    edge = LiveNode(scen, EDGE, ("127.0.0.1", 0), oss.bound, tick=tick)
    await edge.start()
    factory = LiveNode(scen, FACTORY, ("127.0.0.1", 0), edge.bound, tick=tick)
    await factory.start()
    try:
        for _ in range(int(settle / 0.05)):
            await asyncio.sleep(0.05)
            done = [e for e in edge.trace if e.event == "PipelineStateChanged" and e.details.get("to") == "Terminated"]
            if len(done) == 2:
                break
    finally:
        for n in (factory, edge, oss):
            await n.stop()
    return oss, edge, factory


def test_workflow_over_tcp():
    oss, edge, factory = asyncio.run(_three_nodes(tick=0.02, settle=5.0))
    assert check_trace(oss.trace, [
        "IntentReceived{intent_id=intent_a,origin=operator}",
        "PipelineStateChanged{pipeline_id=qos-prediction,to=Running} ; IntentSent{intent_id=intent_b}",
    ]).ok
    assert check_trace(edge.trace, ["IntentReceived{intent_id=intent_b} ; IntentSent{intent_id=intent_c}"]).ok
    for pid in ("inference-1", "inference-2"):
        assert check_trace(factory.trace, [
            f"PipelineStateChanged{{pipeline_id={pid},generation=1,to=Running}} ; "
            f"MonitoringSent{{kind=RedeploymentNotice,pipeline_id={pid}}}",
        ]).ok
        assert check_trace(edge.trace, [
            f"PipelineStateChanged{{pipeline_id={pid},to=TearingDown}} ; "
            f"PipelineStateChanged{{pipeline_id={pid},to=Terminated}}",
        ]).ok


def test_duplicate_and_misdirected_envelopes_dropped():
    async def check():
        edge = LiveNode(smart_factory(), EDGE, ("127.0.0.1", 0), ("127.0.0.1", 1))
        report = Envelope.wrap(1, FACTORY, EDGE, MonitoringReport(FACTORY, 0, {}))
        assert edge._accept(report)
        assert not edge._accept(report)  # replayed
        assert edge._accept(Envelope.wrap(2, FACTORY, EDGE, MonitoringReport(FACTORY, 0, {})))
        upward_intent = Envelope.wrap(1, FACTORY, EDGE, parse_intent(intent_text("c"), Origin.mlfo(FACTORY)))
        assert not edge._accept(upward_intent)
        wrong_recipient = Envelope.wrap(5, EDGE, FACTORY, parse_intent(intent_text("c"), Origin.mlfo(EDGE)))
        assert not edge._accept(wrong_recipient)

    asyncio.run(check())


def test_child_connects_once_parent_appears():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]

    async def scenario():
        scen = smart_factory()
        scen.stimuli = []
        edge = LiveNode(scen, EDGE, ("127.0.0.1", 0), ("127.0.0.1", port), tick=0.02)
        await edge.start()
        await asyncio.sleep(0.2)  # parent not up yet; the link keeps retrying
        oss = LiveNode(scen, OSS, ("127.0.0.1", port), tick=0.02)
        await oss.start()
        try:
            for _ in range(100):
                await asyncio.sleep(0.05)
                if EDGE in oss._children:
                    break
        finally:
            await edge.stop()
            await oss.stop()
        return oss

    oss = asyncio.run(scenario())
    assert oss.node.analytics, "parent never heard from the child"
