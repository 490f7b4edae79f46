"""Control and introspection bridge between one local agent and dev tooling.

A :class:`Gateway` attaches to a single agent and exposes the handful of
operations a development console needs: the platform directory, an
asynchronous shell that goes through the ordinary ACL request path, a
synchronous shell wired straight into the local engine, runlevel buttons,
sandboxed file management, and a live trace feed.  Everything here is
plain threads-and-callbacks; the WebSocket framing lives in
:mod:`rulehive.service`.

Asynchronous shell commands are genuine agent-to-agent traffic: the
gateway composes a REQUEST from its attached agent, sends it through the
platform router, and watches the agent's own inbox for the replies.
Tearing the gateway down therefore changes nothing about how agents talk
to each other.
"""

from __future__ import annotations

import itertools
import threading
from collections import deque
from dataclasses import dataclass
from typing import Callable

from .acl import (
    AclMessage,
    AgentId,
    ONTOLOGY_ENGINE,
    Origin,
    Performative,
    make_engine_action,
)
from .engine import EngineShell
from .errors import (
    ConfigError,
    EngineBusyError,
    PathError,
    SyncLocalOnlyError,
    UnknownAgentError,
)
from .ruleagent import resolve_agent_path
from .runlevels import request_runlevel
from .runtime import Agent, Behavior, BehaviorKind, Platform, TraceEvent

GATEWAY_KINDS = (
    "LIST_AGENTS",
    "EXEC_ASYNC",
    "EXEC_SYNC",
    "SET_RUNLEVEL",
    "GET_FILE",
    "PUT_FILE",
    "SUBSCRIBE_TRACE",
)

#: The four console buttons and the levels they drive to.
RUNLEVEL_BUTTONS = {"n-1": 1, "n-3": 3, "n-5": 5, "n-6!": 6}

#: File types the editor panes may read and write.
EDITABLE_SUFFIXES = (".rbs", ".clp-mini")

SELF_TARGET = "itself"

_TERMINAL = (
    Performative.REFUSE,
    Performative.INFORM,
    Performative.FAILURE,
    Performative.NOT_UNDERSTOOD,
)


def content_to_jsonable(content) -> object:
    """Flatten message content for a JSON frame."""

    from .acl import EngineAction, ResultPayload

    if isinstance(content, ResultPayload):
        return {"status": content.status, "output": content.output,
                "elapsed_ms": content.elapsed_ms}
    if isinstance(content, EngineAction):
        return {"code": content.code, "params": list(content.params),
                "origin": content.origin.value}
    return content


def trace_to_jsonable(event: TraceEvent) -> dict:
    return {"ts_ms": event.ts_ms, "agent": event.agent,
            "kind": event.kind, "detail": event.detail}


class _ReplyRelay(Behavior):
    """Routes replies on gateway-owned conversations to their callbacks.

    Lives on the attached agent so it sees the inbox; everything else in
    the queue is left alone.  Callbacks run on the agent's loop thread and
    are shielded — a broken console must not deactivate the relay.
    """

    kind = BehaviorKind.CYCLIC
    system = True   # must survive hot reboots, or the console goes deaf

    def __init__(self):
        super().__init__("gateway-relay")
        self._lock = threading.Lock()
        self._watched: dict[str, Callable[[AclMessage], None]] = {}

    def watch(self, conversation_id: str, callback) -> None:
        with self._lock:
            self._watched[conversation_id] = callback

    def unwatch(self, conversation_id: str) -> None:
        with self._lock:
            self._watched.pop(conversation_id, None)

    def step(self, agent: Agent) -> bool:
        def ours(msg: AclMessage) -> bool:
            if msg.performative is Performative.REQUEST:
                return False   # the self-addressed job leg is not a reply
            with self._lock:
                return msg.conversation_id in self._watched

        msg = agent.queue.take_if(ours)
        if msg is None:
            return False
        with self._lock:
            callback = self._watched.get(msg.conversation_id)
            if msg.performative in _TERMINAL:
                self._watched.pop(msg.conversation_id, None)
        if callback is not None:
            try:
                callback(msg)
            except Exception:
                pass
        return True


class TraceSubscription:
    """Bounded buffer between an agent's trace hooks and one consumer.

    Hooks fire on whatever thread produced the event, so they only append
    here; the consumer drains at its own pace.  When the buffer overflows,
    the oldest events are discarded and the next drain reports how many
    were lost instead of silently thinning the stream.
    """

    def __init__(self, agent: Agent, *, limit: int = 1024,
                 notify: Callable[[], None] | None = None):
        self._agent = agent
        self._limit = limit
        self._notify = notify
        self._lock = threading.Lock()
        self._events: deque[dict] = deque()
        self._dropped = 0
        self._closed = False
        agent.add_trace_hook(self._hook)

    def _hook(self, event: TraceEvent) -> None:
        with self._lock:
            if self._closed:
                return
            if len(self._events) >= self._limit:
                self._events.popleft()
                self._dropped += 1
            self._events.append(trace_to_jsonable(event))
        if self._notify is not None:
            self._notify()

    def drain(self) -> list[dict]:
        """Buffered events in order; a ``trace-dropped`` marker leads if
        the producer outran the consumer since the previous drain."""

        with self._lock:
            events = list(self._events)
            self._events.clear()
            dropped, self._dropped = self._dropped, 0
        if dropped:
            events.insert(0, {"kind": "trace-dropped", "count": dropped})
        return events

    def close(self) -> None:
        with self._lock:
            self._closed = True
            self._events.clear()
        self._agent.remove_trace_hook(self._hook)


class Gateway:
    """One agent's development-mode control surface."""

    def __init__(self, platform: Platform, agent: Agent):
        self.platform = platform
        self.agent = agent
        self._conv_counter = itertools.count(1)
        self._relay = _ReplyRelay()
        agent.add_behavior(self._relay)

    # --- target resolution ----------------------------------------------------

    def resolve_target(self, target: str | None) -> str:
        if target is None or target == "" or target == SELF_TARGET:
            return self.agent.name
        return target

    # --- operations ------------------------------------------------------------

    def list_agents(self) -> dict:
        return {"agents": self.platform.agent_names(),
                "attached": self.agent.name}

    def exec_async(self, command: str, target: str | None,
                   on_event: Callable[[dict], None]) -> dict:
        """Submit a shell command over the ordinary ACL path and stream the
        AGREE/REFUSE and terminal result back through ``on_event``.  The
        caller is not blocked, and neither is the destination agent."""

        if not isinstance(command, str) or not command.strip():
            raise ConfigError("EXEC_ASYNC needs a non-empty command")
        name = self.resolve_target(target)
        conv = f"gw-{self.agent.ordinal}-{next(self._conv_counter):04d}"
        action = make_engine_action("EVAL_COMMAND", (command,),
                                    origin=Origin.HUMAN)
        receiver = (self.platform.agent(name).id if self.platform.is_local(name)
                    else AgentId(name))

        def relay(msg: AclMessage) -> None:
            on_event({
                "conversation_id": conv,
                "performative": msg.performative.value,
                "sender": msg.sender.name,
                "content": content_to_jsonable(msg.content),
                "terminal": msg.performative in _TERMINAL,
            })

        self._relay.watch(conv, relay)
        try:
            self.agent.send(AclMessage(
                performative=Performative.REQUEST,
                sender=self.agent.id,
                receivers=(receiver,),
                conversation_id=conv,
                content=action,
                ontology=ONTOLOGY_ENGINE,
                reply_with=conv,
            ))
        except Exception:
            self._relay.unwatch(conv)
            raise
        return {"conversation_id": conv, "target": name}

    def cancel_exec(self, conversation_id: str) -> None:
        """Stop relaying a conversation (client went away); the agents
        involved finish their exchange normally."""

        self._relay.unwatch(conversation_id)

    def exec_sync(self, command: str, target: str | None) -> dict:
        """The inner shell: evaluate directly on the attached agent's
        engine, blocking only this caller.  Exclusivity is shared with the
        job machine through the engine's in-use flag, so a detached job and
        a sync command can never interleave."""

        name = self.resolve_target(target)
        if name != self.agent.name:
            raise SyncLocalOnlyError(
                f"synchronous shell is wired to {self.agent.name!r} only; "
                f"use EXEC_ASYNC for {name!r}")
        engine = self.agent.engine
        if engine is None:
            raise ConfigError(f"{name} has no engine")
        if not engine.try_acquire():
            raise EngineBusyError("a detached job is using the engine")
        try:
            output = EngineShell(engine).eval(command)
        finally:
            engine.release()
        return {"output": output}

    def set_runlevel(self, level, target: str | None = None) -> dict:
        """Drive a local agent's runlevel; accepts the console button names
        (n-1, n-3, n-5, n-6!) or a bare level number."""

        if isinstance(level, str):
            if level in RUNLEVEL_BUTTONS:
                level = RUNLEVEL_BUTTONS[level]
            else:
                try:
                    level = int(level)
                except ValueError:
                    raise ConfigError(
                        f"unknown runlevel button {level!r}; "
                        f"expected one of {', '.join(RUNLEVEL_BUTTONS)}") from None
        name = self.resolve_target(target)
        if not self.platform.is_local(name):
            raise UnknownAgentError(name)
        agent = self.platform.agent(name)
        report = request_runlevel(agent, level)
        report["in_service"] = agent.in_service
        return report

    def get_file(self, name: str | None) -> dict:
        """Read one editable file, or list them all when no name is given."""

        workdir = self.agent.workdir
        if not name:
            if workdir is None:
                return {"files": []}
            files = sorted(p.name for p in workdir.iterdir()
                           if p.is_file() and p.suffix in EDITABLE_SUFFIXES)
            return {"files": files}
        path = resolve_agent_path(workdir, name, EDITABLE_SUFFIXES)
        if not path.is_file():
            raise PathError(f"{name}: no such file")
        # newline="" keeps the editor round-trip byte-faithful: a get/put
        # cycle must not quietly rewrite CRLF line endings.
        with path.open(encoding="utf-8", newline="") as handle:
            return {"name": name, "text": handle.read()}

    def put_file(self, name: str, text: str) -> dict:
        if not isinstance(text, str):
            raise ConfigError("PUT_FILE needs body.text as a string")
        path = resolve_agent_path(self.agent.workdir, name, EDITABLE_SUFFIXES)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        return {"name": name, "bytes": len(text.encode("utf-8"))}

    def subscribe_trace(self, *, notify=None, limit: int = 1024) -> TraceSubscription:
        return TraceSubscription(self.agent, limit=limit, notify=notify)

    def describe(self) -> dict:
        return {
            "agent": self.agent.name,
            "runlevel": self.agent.runlevel,
            "in_service": self.agent.in_service,
            "platform": self.platform.address,
        }

    # --- request envelope ------------------------------------------------------

    def handle_request(self, kind: str, target: str | None, body: dict | None,
                       on_event: Callable[[dict], None] | None = None) -> dict:
        """Dispatch one request envelope to its operation.

        ``SUBSCRIBE_TRACE`` is connection-scoped and handled by the
        transport layer, not here.  Errors surface as the package's coded
        exceptions for the caller to frame.
        """

        body = body or {}
        if kind == "LIST_AGENTS":
            return self.list_agents()
        if kind == "EXEC_ASYNC":
            if on_event is None:
                raise ConfigError("EXEC_ASYNC needs an event channel")
            return self.exec_async(body.get("command", ""), target, on_event)
        if kind == "EXEC_SYNC":
            return self.exec_sync(body.get("command", ""), target)
        if kind == "SET_RUNLEVEL":
            return self.set_runlevel(body.get("level"), target)
        if kind == "GET_FILE":
            return self.get_file(body.get("name"))
        if kind == "PUT_FILE":
            return self.put_file(body.get("name", ""), body.get("text"))
        raise ConfigError(f"unknown request kind {kind!r}; "
                          f"expected one of {', '.join(GATEWAY_KINDS)}")

    def close(self) -> None:
        self.agent.remove_behavior(self._relay)
