"""Run a single orchestrator off-simulator, over TCP.

Each node listens for its children and (unless it is the root) connects to
its parent. Both directions of a parent/child link share that one connection
and carry newline-delimited envelopes. Every inbound message, timer and
stimulus goes through one asyncio queue consumed by the actor, so the
:class:`~mlfo.core.MlfoNode` is never touched concurrently.

A dropped parent link is re-established with backoff; envelopes sent since
the last connect are replayed and the receiver discards any ``seq`` it has
already seen.
"""

from __future__ import annotations

import asyncio
import logging
import time
from collections import deque
from typing import Any, Callable, Deque, Dict, List, Optional, Tuple, Union

from .core import (
    ConflictResolved,
    DeployPipeline,
    MlfoAction,
    RejectIntent,
    SendIntent,
    SendMonitoring,
    Teardown,
)
from .intent import DecodeError, Intent
from .interfaces import (
    DirectionError,
    Envelope,
    MessageKind,
    MonitoringEvent,
    MonitoringReport,
    PrivacyError,
    check_direction,
    decode_envelope,
    encode_envelope,
    privacy_filter,
)
from .pipeline import PipelineState
from .scenario import Scenario, Stimulus, build_nodes
from .simulator import qos_predictor_stub
from .trace import TraceEvent

log = logging.getLogger(__name__)

Address = Tuple[str, int]

REPLAY_WINDOW = 1024


def parse_address(text: str) -> Address:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must look like HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


class LiveNode:
    def __init__(
        self,
        scenario: Scenario,
        domain: str,
        listen: Address,
        parent: Optional[Address] = None,
        tick: float = 0.1,
        on_trace: Optional[Callable[[TraceEvent], None]] = None,
    ):
        if domain not in scenario.topology:
            raise ValueError(f"{domain!r} is not in the scenario topology")
        if (parent is None) != (scenario.topology.parent(domain) is None):
            raise ValueError(f"{domain}: --parent is required exactly for non-root domains")
        self.scenario = scenario
        self.topology = scenario.topology
        self.node = build_nodes(scenario)[domain]
        self.domain = domain
        self.listen = listen
        self.parent_addr = parent
        self.tick = tick
        self.on_trace = on_trace
        self.trace: List[TraceEvent] = []
        self.bound: Optional[Address] = None
        self._inbox: "asyncio.Queue[Tuple[str, Any]]" = asyncio.Queue()
        self._children: Dict[str, asyncio.StreamWriter] = {}
        self._held: Dict[str, Deque[Envelope]] = {}
        self._parent_writer: Optional[asyncio.StreamWriter] = None
        self._replay: Deque[Envelope] = deque(maxlen=REPLAY_WINDOW)
        self._next_seq: Dict[str, int] = {}
        self._last_seen: Dict[str, int] = {}
        self._t0 = time.monotonic()
        self._tasks: List[asyncio.Task] = []
        self._server: Optional[asyncio.AbstractServer] = None

    # -- lifecycle -------------------------------------------------------

    async def start(self) -> None:
        self._t0 = time.monotonic()
        self._server = await asyncio.start_server(self._serve_child, *self.listen)
        sock = self._server.sockets[0].getsockname()
        self.bound = (sock[0], sock[1])
        self._tasks.append(asyncio.create_task(self._actor()))
        if self.parent_addr is not None:
            self._tasks.append(asyncio.create_task(self._parent_link()))
        loop = asyncio.get_running_loop()
        for inst in self.scenario.initial_pipelines:
            if inst.placement == self.domain:
                self._inbox.put_nowait(("initial", inst))
        for stim in self.scenario.stimuli:
            if self._stimulus_is_mine(stim):
                loop.call_later(stim.t * self.tick, self._inbox.put_nowait, ("stimulus", stim))

    async def stop(self) -> None:
        for task in self._tasks:
            task.cancel()
        await asyncio.gather(*self._tasks, return_exceptions=True)
        writers = list(self._children.values()) + ([self._parent_writer] if self._parent_writer else [])
        for w in writers:
            w.close()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    def _stimulus_is_mine(self, stim: Stimulus) -> bool:
        if stim.kind == "intent":
            return self.topology.parent(self.domain) is None
        if stim.kind in ("report", "event"):
            return stim.domain == self.domain
        return stim.kind == "public_user_surge"

    @property
    def now(self) -> int:
        return int((time.monotonic() - self._t0) / self.tick)

    def _emit(self, event: str, **details: Any) -> None:
        ev = TraceEvent(self.now, self.domain, event, {k: str(v) for k, v in details.items()})
        self.trace.append(ev)
        if self.on_trace is not None:
            self.on_trace(ev)

    # -- network ---------------------------------------------------------

    def _accept(self, env: Envelope) -> bool:
        """Validate an inbound envelope; False means drop it."""
        try:
            if env.recipient != self.domain:
                raise DirectionError(f"envelope for {env.recipient} reached {self.domain}")
            check_direction(self.topology, env)
            privacy_filter(env.payload, env.kind)
        except (DirectionError, PrivacyError) as exc:
            log.warning("%s: dropping envelope from %s: %s", self.domain, env.sender, exc)
            return False
        if env.seq <= self._last_seen.get(env.sender, 0):
            return False  # replayed duplicate
        self._last_seen[env.sender] = env.seq
        return True

    async def _read_loop(self, reader: asyncio.StreamReader, on_first: Optional[Callable[[Envelope], None]] = None) -> None:
        offset = 0
        while True:
            line = await reader.readline()
            if not line:
                return
            try:
                env = decode_envelope(line, offset)
            except DecodeError as exc:
                log.warning("%s: undecodable line at byte %d: %s", self.domain, exc.offset, exc)
                offset += len(line)
                continue
            offset += len(line)
            if on_first is not None:
                on_first(env)
                on_first = None
            if self._accept(env):
                self._inbox.put_nowait(("envelope", env))

    async def _serve_child(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        def register(env: Envelope) -> None:
            if self.topology.is_child(env.sender, self.domain):
                self._children[env.sender] = writer
                held = self._held.pop(env.sender, deque())
                while held:
                    writer.write(encode_envelope(held.popleft()))

        try:
            await self._read_loop(reader, register)
        finally:
            for child, w in list(self._children.items()):
                if w is writer:
                    del self._children[child]
            writer.close()

    async def _parent_link(self) -> None:
        assert self.parent_addr is not None
        parent = self.topology.parent(self.domain)
        assert parent is not None
        backoff = 0.05
        while True:
            try:
                reader, writer = await asyncio.open_connection(*self.parent_addr)
            except OSError:
                await asyncio.sleep(backoff)
                backoff = min(backoff * 2, 2.0)
                continue
            backoff = 0.05
            self._parent_writer = writer
            # announce ourselves so the parent can route intents down this link
            hello = self._wrap(parent, MonitoringReport(self.domain, self.now, {}))
            writer.write(encode_envelope(hello))
            for env in list(self._replay)[:-1]:
                writer.write(encode_envelope(env))
            try:
                await writer.drain()
                await self._read_loop(reader)
            except (ConnectionError, OSError):
                pass
            finally:
                self._parent_writer = None
                writer.close()
            await asyncio.sleep(backoff)

    def _wrap(self, to: str, message: Union[Intent, MonitoringReport, MonitoringEvent]) -> Envelope:
        seq = self._next_seq.get(to, 1)
        self._next_seq[to] = seq + 1
        env = Envelope.wrap(seq, self.domain, to, message)
        check_direction(self.topology, env)
        privacy_filter(env.payload, env.kind)
        if env.kind.upward:
            self._replay.append(env)
        return env

    def _send(self, to: str, message: Union[Intent, MonitoringReport, MonitoringEvent]) -> Envelope:
        env = self._wrap(to, message)
        if env.kind.upward:
            if self._parent_writer is not None:
                self._parent_writer.write(encode_envelope(env))
        elif to in self._children:
            self._children[to].write(encode_envelope(env))
        else:
            self._held.setdefault(to, deque()).append(env)
        return env

    # -- actor -----------------------------------------------------------

    async def _actor(self) -> None:
        while True:
            kind, payload = await self._inbox.get()
            self.node.clock = self.now
            try:
                self._dispatch(kind, payload)
            except Exception:  # keep the actor alive; one bad message must not stop the node
                log.exception("%s: failed to handle %s", self.domain, kind)

    def _dispatch(self, kind: str, payload: Any) -> None:
        node = self.node
        if kind == "initial":
            self._execute([DeployPipeline(payload)])
        elif kind == "envelope":
            env: Envelope = payload
            message = env.open()
            if env.kind is MessageKind.INTENT:
                self._emit("IntentReceived", intent_id=message.intent_id, origin=message.origin.label,  # type: ignore[union-attr]
                           sender=env.sender, seq=env.seq)
                self._execute(node.handle_intent(message))  # type: ignore[arg-type]
            else:
                self._execute(node.handle_monitoring(message))  # type: ignore[arg-type]
        elif kind == "stimulus":
            stim: Stimulus = payload
            if stim.kind == "intent":
                self._emit("IntentReceived", intent_id=stim.intent.intent_id, origin="operator", sender="operator")  # type: ignore[union-attr]
                self._execute(node.handle_intent(stim.intent))  # type: ignore[arg-type]
            elif stim.kind == "public_user_surge":
                for inst in list(node.hosted()):
                    event = qos_predictor_stub(inst, stim)
                    if event is not None:
                        self._emit("MonitoringSent", kind=event.kind, scope="internal", recipient=self.domain,
                                   pipeline_id=inst.pipeline_id, **event.attrs)
                        self._execute(node.handle_monitoring(event))
            elif stim.message is not None and node.parent is not None:
                self._execute([SendMonitoring(stim.message, node.parent)])
        elif kind == "underlay":
            pipeline_id, generation, state = payload
            before = node.find(pipeline_id, generation)
            actions = node.on_pipeline_state(pipeline_id, generation, state)
            after = node.find(pipeline_id, generation)
            if before is not None and after is not None:
                self._emit("PipelineStateChanged", pipeline_id=pipeline_id, generation=generation,
                           **{"from": before.state.value, "to": after.state.value},
                           offloaded=str(after.offloaded).lower())
            self._execute(actions)
            if after is not None and state is PipelineState.DEPLOYING:
                self._later(1, pipeline_id, generation, PipelineState.RUNNING)

    def _later(self, ticks: int, pipeline_id: str, generation: int, state: PipelineState) -> None:
        asyncio.get_running_loop().call_later(
            ticks * self.tick, self._inbox.put_nowait, ("underlay", (pipeline_id, generation, state))
        )

    def _execute(self, actions: List[MlfoAction]) -> None:
        for a in actions:
            if isinstance(a, DeployPipeline):
                self._emit("PipelineStateChanged", pipeline_id=a.pipeline_id, generation=a.instance.generation,
                           **{"from": "", "to": a.instance.state.value}, offloaded=str(a.instance.offloaded).lower())
                self._later(1, a.pipeline_id, a.instance.generation, PipelineState.DEPLOYING)
            elif isinstance(a, Teardown):
                self._emit("PipelineStateChanged", pipeline_id=a.pipeline_id, generation=a.generation,
                           **{"from": "Running", "to": "TearingDown"}, offloaded=str(a.offloaded).lower())
                self._later(1, a.pipeline_id, a.generation, PipelineState.TERMINATED)
            elif isinstance(a, SendIntent):
                env = self._send(a.to, a.intent)
                self._emit("IntentSent", intent_id=a.intent.intent_id, recipient=a.to, seq=env.seq)
            elif isinstance(a, SendMonitoring):
                env = self._send(a.to, a.message)
                kind = a.message.kind if isinstance(a.message, MonitoringEvent) else "MonitoringReport"
                details = dict(a.message.attrs) if isinstance(a.message, MonitoringEvent) else {}
                self._emit("MonitoringSent", kind=kind, recipient=a.to, seq=env.seq, scope="interface", **details)
            elif isinstance(a, RejectIntent):
                self._emit("IntentRejected", intent_id=a.intent_id, reason=a.reason)
            elif isinstance(a, ConflictResolved):
                self._emit("ConflictResolved", operand=a.operand, winner=a.winner,
                           incumbent=a.incumbent_intent, challenger=a.challenger_intent)


async def serve(node: LiveNode, duration: Optional[float] = None) -> None:
    await node.start()
    try:
        if duration is None:
            await asyncio.Event().wait()
        else:
            await asyncio.sleep(duration)
    finally:
        await node.stop()
