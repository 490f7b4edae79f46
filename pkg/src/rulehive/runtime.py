"""Agent platform: message queues, behavior scheduling, and routing.

Each agent runs one control thread that steps its active behaviors round
robin; a behavior handles at most one message per step, so no behavior can
starve its siblings.  The loop is event-driven: when no behavior made
progress the thread sleeps on a condition that is notified whenever a
message arrives, a control task is submitted, a detached job completes, or
a timer behavior comes due.

A platform is a process-local registry of agents plus the routing logic.
Agents address each other by name; a receiver with a ``host:port`` address
that isn't this platform's own is forwarded over TCP (see ``transport``).
Sending to a name nobody registered produces a FAILURE back to the sender —
the middleware stays silent on success and speaks up on failure.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from concurrent.futures import Future
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .acl import (
    AclMessage,
    AgentId,
    ONTOLOGY_DIRECTORY,
    Performative,
    validate_message,
)
from .errors import DuplicateAgentError, UnknownAgentError

DIRECTORY_AGENT_NAME = "platform.directory"


def now_ms() -> float:
    return time.monotonic() * 1000.0


@dataclass(frozen=True, slots=True)
class ReceiveTemplate:
    """Matcher over the fields a behavior may select on.  ``None`` means
    "any"; the empty template matches every message."""

    performative: Performative | None = None
    ontology: str | None = None
    conversation_id: str | None = None
    in_reply_to: str | None = None

    def matches(self, msg: AclMessage) -> bool:
        if self.performative is not None and msg.performative != self.performative:
            return False
        if self.ontology is not None and msg.ontology != self.ontology:
            return False
        if self.conversation_id is not None and msg.conversation_id != self.conversation_id:
            return False
        if self.in_reply_to is not None and msg.in_reply_to != self.in_reply_to:
            return False
        return True


MATCH_ANY = ReceiveTemplate()


@dataclass(frozen=True, slots=True)
class TraceEvent:
    ts_ms: float
    agent: str
    kind: str          # enqueue | take | send | job-start | job-done | behavior-error | runlevel
    detail: dict


class MessageQueue:
    """FIFO inbox with template-based selective receive."""

    def __init__(self, owner: "Agent"):
        self._owner = owner
        self._items: deque[AclMessage] = deque()
        self._lock = threading.Lock()

    def put(self, msg: AclMessage) -> None:
        with self._lock:
            self._items.append(msg)
        self._owner.trace("enqueue", _msg_detail(msg))
        self._owner.notify()

    def take(self, template: ReceiveTemplate = MATCH_ANY) -> AclMessage | None:
        """Remove and return the oldest message matching ``template``."""

        return self.take_if(template.matches)

    def take_if(self, predicate) -> AclMessage | None:
        with self._lock:
            for i, msg in enumerate(self._items):
                if predicate(msg):
                    del self._items[i]
                    break
            else:
                return None
        self._owner.trace("take", _msg_detail(msg))
        return msg

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)

    def pending(self) -> list[AclMessage]:
        with self._lock:
            return list(self._items)


def _msg_detail(msg: AclMessage) -> dict:
    return {
        "perf": msg.performative.value,
        "from": msg.sender.name,
        "to": [r.name for r in msg.receivers],
        "conv": msg.conversation_id,
        "ontology": msg.ontology,
    }


class BehaviorKind(str, Enum):
    ONE_SHOT = "ONE_SHOT"
    CYCLIC = "CYCLIC"
    FSM = "FSM"


class Behavior:
    """A unit of agent work.  ``step`` returns True when it did something
    (handled a message, fired a timer); the scheduler uses that to decide
    whether the agent may sleep."""

    kind = BehaviorKind.CYCLIC
    # Platform wiring (e.g. a gateway's reply relay) marks itself True so a
    # hot reboot tears down application behaviors without going deaf.
    system = False

    def __init__(self, name: str):
        self.name = name
        self.active = False
        self.loaded_at_level: int | None = None
        self.last_error: str | None = None

    def step(self, agent: "Agent") -> bool:
        raise NotImplementedError

    def next_due(self) -> float | None:
        """Monotonic deadline for timer behaviors; None = step on any pass."""

        return None


class Agent:
    """One named participant with an inbox, behaviors, and its own thread."""

    def __init__(self, platform: "Platform", aid: AgentId, *, engine=None,
                 workdir: Path | None = None, ordinal: int = 0):
        self.platform = platform
        self.id = aid
        self.engine = engine
        self.workdir = workdir
        self.ordinal = ordinal
        self.queue = MessageQueue(self)
        self.behaviors: list[Behavior] = []
        self.runlevel: int | None = None
        self.in_service = False
        self.protocol_timings: dict[str, object] = {}
        self._trace_hooks: list = []
        self._hooks_lock = threading.Lock()
        self._wake = threading.Condition()
        self._wake_counter = 0
        self._control: deque[tuple] = deque()
        self._thread: threading.Thread | None = None
        self._stopping = False

    @property
    def name(self) -> str:
        return self.id.name

    # --- wakeups -------------------------------------------------------------

    def notify(self) -> None:
        with self._wake:
            self._wake_counter += 1
            self._wake.notify_all()

    def wake_token(self) -> int:
        """Pair with ``wait_for_event`` to sleep without missing a wakeup:
        read the token, check for work, then wait only if the token is
        unchanged."""

        with self._wake:
            return self._wake_counter

    def wait_for_event(self, token: int, timeout: float | None) -> int:
        with self._wake:
            if self._wake_counter == token and not self._stopping:
                self._wake.wait(timeout)
            return self._wake_counter

    # --- tracing -------------------------------------------------------------

    def add_trace_hook(self, hook) -> None:
        with self._hooks_lock:
            self._trace_hooks.append(hook)

    def remove_trace_hook(self, hook) -> None:
        with self._hooks_lock:
            if hook in self._trace_hooks:
                self._trace_hooks.remove(hook)

    def trace(self, kind: str, detail: dict) -> None:
        with self._hooks_lock:
            hooks = list(self._trace_hooks)
        if not hooks:
            return
        event = TraceEvent(ts_ms=now_ms(), agent=self.name, kind=kind, detail=detail)
        for hook in hooks:
            try:
                hook(event)
            except Exception:
                pass  # observers must never take the agent down

    # --- behavior management ---------------------------------------------------

    def add_behavior(self, behavior: Behavior, *, active: bool = True) -> Behavior:
        behavior.active = active
        self.behaviors.append(behavior)
        self.notify()
        return behavior

    def remove_behavior(self, behavior: Behavior) -> None:
        if behavior in self.behaviors:
            self.behaviors.remove(behavior)

    # --- control tasks -----------------------------------------------------------
    # Behavior lists and runlevels are touched only on the agent thread; other
    # threads (gateway, tests, CLI) submit closures and wait on the future.

    def submit_control(self, fn) -> Future:
        fut: Future = Future()
        if self._thread is None or not self._thread.is_alive():
            try:
                fut.set_result(fn())
            except BaseException as exc:
                fut.set_exception(exc)
            return fut
        self._control.append((fn, fut))
        self.notify()
        return fut

    def run_control(self, fn):
        """Run ``fn`` on the agent thread and return its result."""

        return self.submit_control(fn).result(timeout=30)

    def _drain_control(self) -> bool:
        did = False
        while self._control:
            fn, fut = self._control.popleft()
            if fut.set_running_or_notify_cancel():
                try:
                    fut.set_result(fn())
                except BaseException as exc:
                    fut.set_exception(exc)
            did = True
        return did

    # --- messaging ----------------------------------------------------------------

    def send(self, msg: AclMessage) -> None:
        self.trace("send", _msg_detail(msg))
        self.platform.route(msg)

    # --- scheduling -----------------------------------------------------------------

    def start(self) -> None:
        if self._thread is not None and self._thread.is_alive():
            return
        self._stopping = False
        self._thread = threading.Thread(target=self._loop, name=f"agent:{self.name}",
                                        daemon=True)
        self._thread.start()

    def stop(self, timeout: float = 5.0) -> None:
        self._stopping = True
        self.notify()
        if self._thread is not None:
            self._thread.join(timeout=timeout)
            self._thread = None

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def _loop(self) -> None:
        while not self._stopping:
            with self._wake:
                token = self._wake_counter
            progressed = self._drain_control()
            now = time.monotonic()
            deadline: float | None = None
            for behavior in list(self.behaviors):
                if self._stopping:
                    return
                if not behavior.active:
                    continue
                due = behavior.next_due()
                if due is not None and due > now:
                    deadline = due if deadline is None else min(deadline, due)
                    continue
                try:
                    worked = bool(behavior.step(self))
                except Exception as exc:
                    behavior.active = False
                    behavior.last_error = repr(exc)
                    self.trace("behavior-error", {"behavior": behavior.name,
                                                  "error": repr(exc)})
                    continue
                if worked:
                    progressed = True
                    if behavior.kind is BehaviorKind.ONE_SHOT:
                        behavior.active = False
            if progressed:
                continue
            timeout = None
            if deadline is not None:
                timeout = max(0.0, deadline - time.monotonic())
            with self._wake:
                if self._wake_counter == token and not self._stopping:
                    self._wake.wait(timeout)


class Platform:
    """Process-local agent registry and message router."""

    def __init__(self, *, host: str = "127.0.0.1", port: int | None = None,
                 workdir: Path | str | None = None):
        self.host = host
        self.port = port
        self.workdir = Path(workdir) if workdir is not None else None
        self._agents: dict[str, Agent] = {}
        self._lock = threading.RLock()
        self._ordinals = 0
        self._listener = None
        self._pool = None
        self.directory_agent = self._register(AgentId(DIRECTORY_AGENT_NAME), engine=None,
                                              reserved=True)
        self.directory_agent.add_behavior(DirectoryBehavior())

    # --- registry ------------------------------------------------------------

    @property
    def address(self) -> str | None:
        return f"{self.host}:{self.port}" if self.port is not None else None

    def _register(self, aid: AgentId, *, engine, reserved: bool = False) -> Agent:
        with self._lock:
            if not aid.name:
                raise UnknownAgentError("agent name must be non-empty")
            if aid.name in self._agents:
                raise DuplicateAgentError(aid.name)
            if aid.name == DIRECTORY_AGENT_NAME and not reserved:
                raise DuplicateAgentError(f"{aid.name} is reserved")
            workdir = None
            if self.workdir is not None:
                workdir = self.workdir / aid.name
                workdir.mkdir(parents=True, exist_ok=True)
            ordinal = self._ordinals
            self._ordinals += 1
            agent = Agent(self, AgentId(aid.name, self.address), engine=engine,
                          workdir=workdir, ordinal=ordinal)
            self._agents[aid.name] = agent
            return agent

    def register_agent(self, name: str, *, engine=None) -> Agent:
        return self._register(AgentId(name), engine=engine)

    def deregister_agent(self, name: str) -> None:
        with self._lock:
            agent = self._agents.pop(name, None)
        if agent is None:
            raise UnknownAgentError(name)
        agent.stop()

    def agent(self, name: str) -> Agent:
        with self._lock:
            agent = self._agents.get(name)
        if agent is None:
            raise UnknownAgentError(name)
        return agent

    def agent_names(self) -> list[str]:
        with self._lock:
            return sorted(self._agents)

    def is_local(self, name: str) -> bool:
        with self._lock:
            return name in self._agents

    def agents(self) -> list[Agent]:
        with self._lock:
            return [self._agents[n] for n in sorted(self._agents)]

    # --- lifecycle ---------------------------------------------------------------

    def start(self) -> None:
        if self.port is not None and self._listener is None:
            from .transport import ConnectionPool, TcpListener
            self._pool = ConnectionPool()
            self._listener = TcpListener(self, self.host, self.port)
            self._listener.start()
            self.port = self._listener.port   # resolves port 0 to the bound port
            # agents were registered before the listener existed; fix addresses
            with self._lock:
                for agent in self._agents.values():
                    agent.id = AgentId(agent.id.name, self.address)
        for agent in self.agents():
            agent.start()

    def stop(self) -> None:
        for agent in self.agents():
            agent.stop()
        if self._listener is not None:
            self._listener.shutdown()
            self._listener = None
        if self._pool is not None:
            self._pool.close()
            self._pool = None

    # --- routing ----------------------------------------------------------------

    def route(self, msg: AclMessage) -> None:
        """Deliver to every receiver: locally, over TCP, or as a FAILURE
        bounced back to the sender for unknown names."""

        validate_message(msg)
        remote: dict[str, list[AgentId]] = {}
        for receiver in msg.receivers:
            if self.is_local(receiver.name):
                self.agent(receiver.name).queue.put(msg)
            elif receiver.address and receiver.address != self.address:
                remote.setdefault(receiver.address, []).append(receiver)
            else:
                self._bounce(msg, receiver.name)
        for address in remote:
            try:
                if self._pool is None:
                    raise ConnectionError("platform has no network listener")
                from .acl import encode_message
                self._pool.send(address, encode_message(msg))
            except OSError as exc:
                self._bounce(msg, f"{address}: {exc}")

    def route_incoming(self, msg: AclMessage) -> None:
        """Entry point for messages arriving over TCP."""

        for receiver in msg.receivers:
            if self.is_local(receiver.name):
                self.agent(receiver.name).queue.put(msg)
            elif msg.sender.address and msg.sender.address != self.address:
                self.route(_failure_for(self, msg, receiver.name))

    def _bounce(self, msg: AclMessage, target: str) -> None:
        """Tell a local sender that delivery failed; non-local senders are
        handled by ``route_incoming`` on their own platform."""

        if msg.performative is Performative.FAILURE:
            return   # never bounce a bounce
        if self.is_local(msg.sender.name):
            self.agent(msg.sender.name).queue.put(_failure_for(self, msg, target))

    def describe(self) -> list[dict]:
        out = []
        for agent in self.agents():
            out.append({
                "name": agent.name,
                "runlevel": agent.runlevel,
                "in_service": agent.in_service,
                "has_engine": agent.engine is not None,
                "behaviors": [
                    {"name": b.name, "kind": b.kind.value, "active": b.active}
                    for b in agent.behaviors
                ],
            })
        return out


def _failure_for(platform: Platform, msg: AclMessage, target: str) -> AclMessage:
    return AclMessage(
        performative=Performative.FAILURE,
        sender=AgentId(DIRECTORY_AGENT_NAME, platform.address),
        receivers=(msg.sender,),
        conversation_id=msg.conversation_id,
        content=f"UNKNOWN_AGENT: {target}",
        ontology=msg.ontology,
        in_reply_to=msg.reply_with,
    )


class DirectoryBehavior(Behavior):
    """Answers directory lookups: REQUEST on the directory ontology gets an
    INFORM listing all registered agent names, one per line."""

    kind = BehaviorKind.CYCLIC

    def __init__(self):
        super().__init__("directory")
        self._template = ReceiveTemplate(performative=Performative.REQUEST,
                                         ontology=ONTOLOGY_DIRECTORY)

    def step(self, agent: Agent) -> bool:
        msg = agent.queue.take(self._template)
        if msg is None:
            return False
        from .acl import create_reply
        agent.send(create_reply(msg, Performative.INFORM, agent.id,
                                "\n".join(agent.platform.agent_names())))
        return True
