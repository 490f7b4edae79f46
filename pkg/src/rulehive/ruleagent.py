"""Agents that own a rule engine and serve it over messages.

The request path is deliberately twofold.  When an external REQUEST for
engine work arrives, the receiving agent only decides and acknowledges:
it replies AGREE (or REFUSE) immediately, then mails *itself* a copy of the
action.  A separate three-state behavior picks up those self-addressed jobs
one at a time — LISTENING takes the next job, EXECUTION detaches the engine
call onto its own thread, RESPONSE sends the terminal INFORM or FAILURE to
the original requester.  The agent's message loop therefore never waits on
the engine: pings get answered while a long job runs.

The self-addressed job message carries everything the responder needs —
the original sender in its ``sender`` field, the original conversation id,
the original ``reply_with``, and the action itself — so a job survives
anything short of losing the queue (behaviors can be torn down and rebuilt
around it during a hot reboot).
"""

from __future__ import annotations

import ctypes
import os
import sys
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .acl import (
    AclMessage,
    AgentId,
    DEV_ONLY_ACTIONS,
    EngineAction,
    ONTOLOGY_ENGINE,
    ONTOLOGY_ENGINE_JOB,
    ONTOLOGY_PRESENCE,
    Performative,
    ResultPayload,
    create_reply,
)
from .engine import Engine, EngineShell
from .engine.parser import (
    Deffacts,
    parse_fact_string,
    parse_program,
    render_atom,
)
from .errors import (
    EngineParseError,
    EvalError,
    PathError,
    RulehiveError,
)
from .runtime import Agent, Behavior, BehaviorKind, Platform, ReceiveTemplate

#: ontologies the standard behaviors claim; anything else REQUESTed at the
#: agent is answered NOT_UNDERSTOOD by the catch-all.
_KNOWN_ONTOLOGIES = frozenset(
    {ONTOLOGY_ENGINE, ONTOLOGY_ENGINE_JOB, ONTOLOGY_PRESENCE}
)

_TIMING_KEEP = 2048


@dataclass(slots=True)
class ProtocolTiming:
    """Per-conversation latency decomposition, measured on the serving agent.

    ``accept_ms`` covers external receipt up to the self-addressed job being
    enqueued; ``process_ms`` covers job dequeue up to engine completion.
    """

    conversation_id: str
    accept_ms: float | None = None
    process_ms: float | None = None
    code: str | None = None


@dataclass(slots=True)
class PendingJob:
    message: AclMessage            # the self-addressed job message
    action: EngineAction
    taken_at: float
    result: ResultPayload | None = None
    done: threading.Event = field(default_factory=threading.Event)


def _timing(agent: Agent, conv: str) -> ProtocolTiming:
    t = agent.protocol_timings.get(conv)
    if t is None:
        t = ProtocolTiming(conversation_id=conv)
        agent.protocol_timings[conv] = t
        while len(agent.protocol_timings) > _TIMING_KEEP:
            agent.protocol_timings.pop(next(iter(agent.protocol_timings)))
    return t


def _is_platform_member(agent: Agent, sender: AgentId) -> bool:
    """Membership is the only authorization there is: local names must be
    registered; anything that arrived from another platform carries that
    platform's address and is taken at its word."""

    if agent.platform.is_local(sender.name):
        return True
    return sender.address is not None and sender.address != agent.platform.address


def handle_engine_request(agent: Agent, msg: AclMessage) -> None:
    """Decide on an external engine REQUEST: refuse, or agree and queue the
    job to self.  Never touches the engine."""

    received = time.monotonic()
    if not isinstance(msg.content, EngineAction):
        agent.send(create_reply(msg, Performative.NOT_UNDERSTOOD, agent.id,
                                "expected an engine action"))
        return
    action = msg.content
    if not _is_platform_member(agent, msg.sender):
        agent.send(create_reply(msg, Performative.REFUSE, agent.id,
                                f"UNAUTHORIZED: {msg.sender.name} is not a platform member"))
        return
    if action.code in DEV_ONLY_ACTIONS:
        agent.send(create_reply(msg, Performative.REFUSE, agent.id,
                                f"DEV_ONLY: {action.code} is reserved for a local console"))
        return
    if agent.engine is None:
        agent.send(create_reply(msg, Performative.REFUSE, agent.id,
                                f"NO_ENGINE: {agent.name} does not own an engine"))
        return
    agent.send(create_reply(msg, Performative.AGREE, agent.id))
    job = AclMessage(
        performative=Performative.REQUEST,
        sender=msg.sender,                 # who to answer when the job is done
        receivers=(agent.id,),
        conversation_id=msg.conversation_id,
        content=action,
        ontology=ONTOLOGY_ENGINE_JOB,
        reply_with=msg.reply_with,
    )
    agent.send(job)
    timing = _timing(agent, msg.conversation_id)
    timing.accept_ms = (time.monotonic() - received) * 1000.0
    timing.code = action.code


class PresenceResponder(Behavior):
    """Liveness: any presence REQUEST is answered INFORM "alive" at once."""

    def __init__(self):
        super().__init__("presence-responder")
        self._template = ReceiveTemplate(performative=Performative.REQUEST,
                                         ontology=ONTOLOGY_PRESENCE)

    def step(self, agent: Agent) -> bool:
        msg = agent.queue.take(self._template)
        if msg is None:
            return False
        agent.send(create_reply(msg, Performative.INFORM, agent.id, "alive"))
        return True


class EngineRequestAcceptor(Behavior):
    """First half of the request path; see ``handle_engine_request``."""

    def __init__(self):
        super().__init__("engine-request-acceptor")
        self._template = ReceiveTemplate(performative=Performative.REQUEST,
                                         ontology=ONTOLOGY_ENGINE)

    def step(self, agent: Agent) -> bool:
        msg = agent.queue.take(self._template)
        if msg is None:
            return False
        handle_engine_request(agent, msg)
        return True


class EngineJobFsm(Behavior):
    """Second half: drains self-addressed jobs strictly one at a time.

    LISTENING -> EXECUTION detaches the engine call to a worker thread and
    returns immediately; the agent loop keeps serving other behaviors while
    the job runs.  Job completion notifies the agent, EXECUTION -> RESPONSE
    sends the terminal reply, and the machine listens again.  Because only
    this behavior touches the engine on the message path, jobs are FIFO and
    the engine's in-use flag can never be contended here.
    """

    kind = BehaviorKind.FSM
    LISTENING, EXECUTION, RESPONSE = "LISTENING", "EXECUTION", "RESPONSE"

    def __init__(self):
        super().__init__("engine-job-fsm")
        self.state = self.LISTENING
        self.job: PendingJob | None = None
        self._template = ReceiveTemplate(performative=Performative.REQUEST,
                                         ontology=ONTOLOGY_ENGINE_JOB)

    def step(self, agent: Agent) -> bool:
        if self.state == self.LISTENING:
            msg = agent.queue.take(self._template)
            if msg is None:
                return False
            assert isinstance(msg.content, EngineAction)
            self.job = PendingJob(message=msg, action=msg.content,
                                  taken_at=time.monotonic())
            self.state = self.EXECUTION
            agent.trace("job-start", {"conv": msg.conversation_id,
                                      "code": msg.content.code})
            worker = threading.Thread(target=self._run_job, args=(agent, self.job),
                                      name=f"{agent.name}:job", daemon=True)
            worker.start()
            return True

        if self.state == self.EXECUTION:
            if self.job is None or not self.job.done.is_set():
                return False
            self.state = self.RESPONSE
            return True

        # RESPONSE
        job = self.job
        self.job = None
        self.state = self.LISTENING
        result = job.result
        perf = Performative.INFORM if result.status == "OK" else Performative.FAILURE
        agent.send(AclMessage(
            performative=perf,
            sender=agent.id,
            receivers=(job.message.sender,),
            conversation_id=job.message.conversation_id,
            content=result,
            ontology=ONTOLOGY_ENGINE,
            in_reply_to=job.message.reply_with,
        ))
        timing = _timing(agent, job.message.conversation_id)
        timing.process_ms = (time.monotonic() - job.taken_at) * 1000.0
        agent.trace("job-done", {"conv": job.message.conversation_id,
                                 "code": job.action.code, "status": result.status})
        return True

    def _run_job(self, agent: Agent, job: PendingJob) -> None:
        _deprioritize_current_thread()
        engine: Engine = agent.engine
        try:
            engine.acquire()   # never contended: this FSM is the only engine user
            try:
                job.result = dispatch_action(engine, job.action, workdir=agent.workdir)
            finally:
                engine.release()
        except RulehiveError as exc:
            job.result = ResultPayload(status="ERROR", output=str(exc))
        except Exception as exc:   # engine bug: report, don't kill the agent
            job.result = ResultPayload(status="ERROR", output=f"INTERNAL: {exc!r}")
        finally:
            job.done.set()
            agent.notify()


def _deprioritize_current_thread(nice: int = 10) -> None:
    """Engine jobs are background work next to message serving: demote the
    worker thread so a woken agent loop preempts it immediately instead of
    waiting out the scheduler's preemption granularity.  Best effort — on
    platforms without per-thread niceness the job just runs at normal
    priority."""

    try:
        os.setpriority(os.PRIO_PROCESS, threading.get_native_id(), nice)
    except (AttributeError, OSError):
        pass
    _request_short_scheduling_slice(nice)


class _SchedAttr(ctypes.Structure):
    _fields_ = [
        ("size", ctypes.c_uint32),
        ("sched_policy", ctypes.c_uint32),
        ("sched_flags", ctypes.c_uint64),
        ("sched_nice", ctypes.c_int32),
        ("sched_priority", ctypes.c_uint32),
        ("sched_runtime", ctypes.c_uint64),
        ("sched_deadline", ctypes.c_uint64),
        ("sched_period", ctypes.c_uint64),
        ("sched_util_min", ctypes.c_uint32),
        ("sched_util_max", ctypes.c_uint32),
    ]


_SYS_SCHED_SETATTR = {"x86_64": 314, "aarch64": 274}


def _request_short_scheduling_slice(nice: int, slice_ns: int = 100_000) -> None:
    """On Linux, additionally ask for a short scheduling slice
    (``sched_setattr`` with ``sched_runtime``): recent kernels defer wakeup
    preemption until the running task's slice reaches parity, so a compute
    thread with the default slice can hold a core for a few extra
    milliseconds after a message-loop thread wakes.  A 100 µs slice makes
    that handoff near-immediate.  Shrinking one's own slice needs no
    privileges; anywhere this doesn't apply, niceness alone has to do."""

    if sys.platform != "linux":
        return
    nr = _SYS_SCHED_SETATTR.get(os.uname().machine)
    if nr is None:
        return
    try:
        libc = ctypes.CDLL(None, use_errno=True)
        attr = _SchedAttr(size=ctypes.sizeof(_SchedAttr), sched_policy=0,
                          sched_nice=nice, sched_runtime=slice_ns)
        libc.syscall(nr, threading.get_native_id(), ctypes.byref(attr), 0)
    except Exception:
        pass


class NotUnderstoodResponder(Behavior):
    """Catch-all, installed last: REQUESTs on ontologies no other behavior
    claims are answered NOT_UNDERSTOOD instead of rotting in the queue."""

    def __init__(self, claimed: frozenset[str] = _KNOWN_ONTOLOGIES):
        super().__init__("not-understood-responder")
        self._claimed = claimed

    def step(self, agent: Agent) -> bool:
        def unclaimed(msg: AclMessage) -> bool:
            return (msg.performative is Performative.REQUEST
                    and msg.ontology not in self._claimed)

        msg = agent.queue.take_if(unclaimed)
        if msg is None:
            return False
        agent.send(create_reply(msg, Performative.NOT_UNDERSTOOD, agent.id,
                                f"no behavior handles ontology {msg.ontology!r}"))
        return True


def install_standard_behaviors(agent: Agent) -> None:
    """The full serving stack, in scheduling order: liveness first, then the
    accept half, then the job machine, then the catch-all."""

    agent.add_behavior(PresenceResponder())
    agent.add_behavior(EngineRequestAcceptor())
    agent.add_behavior(EngineJobFsm())
    agent.add_behavior(NotUnderstoodResponder())


def make_rule_agent(platform: Platform, name: str, *,
                    standard_behaviors: bool = True) -> Agent:
    agent = platform.register_agent(name, engine=Engine())
    if standard_behaviors:
        install_standard_behaviors(agent)
    return agent


# --- action dispatch ---------------------------------------------------------

_LOAD_SUFFIXES = (".clp-mini",)
_DUMP_SUFFIXES = (".dump.txt", ".dump.bin")


def resolve_agent_path(workdir: Path | None, name: str,
                       suffixes: tuple[str, ...]) -> Path:
    """Map a request-supplied file name into the agent's working directory,
    refusing escapes and unexpected extensions."""

    if workdir is None:
        raise PathError("agent has no working directory")
    if not any(name.endswith(s) for s in suffixes):
        raise PathError(f"{name}: expected one of {', '.join(suffixes)}")
    path = (workdir / name).resolve()
    if not path.is_relative_to(workdir.resolve()):
        raise PathError(f"{name}: outside the agent directory")
    return path


def _int_param(action: EngineAction, pos: int) -> int:
    try:
        return int(action.params[pos])
    except ValueError:
        raise EvalError(
            f"{action.code}: parameter {pos} must be an integer, "
            f"got {action.params[pos]!r}") from None


def dispatch_action(engine: Engine, action: EngineAction, *,
                    workdir: Path | None = None) -> ResultPayload:
    """Execute one vocabulary action against an engine.

    Always returns a payload: engine errors come back as status ERROR with
    the diagnostic in ``output``, and ``elapsed_ms`` covers just the engine
    work.  Raises nothing on the normal path so callers can stay simple.
    """

    started = time.monotonic()
    try:
        output = _apply_action(engine, action, workdir)
        status = "OK"
    except RulehiveError as exc:
        output, status = str(exc), "ERROR"
    except Exception as exc:
        output, status = f"INTERNAL: {exc!r}", "ERROR"
    elapsed = int((time.monotonic() - started) * 1000)
    return ResultPayload(status=status, output=output, elapsed_ms=elapsed)


def _load_text(engine: Engine, text: str, *, deffacts_only: bool, origin: str) -> str:
    constructs = parse_program(text)
    if deffacts_only and not all(isinstance(c, Deffacts) for c in constructs):
        raise EngineParseError(f"{origin}: expected only deffacts constructs")
    engine.load_constructs(constructs)
    return f"loaded {len(constructs)} construct(s) from {origin}"


def _apply_action(engine: Engine, action: EngineAction, workdir: Path | None) -> str:
    shell = EngineShell(engine)
    code = action.code
    p = action.params

    if code == "LOAD_FILE" or code == "LOAD_FACTS":
        path = resolve_agent_path(workdir, p[0], _LOAD_SUFFIXES)
        if not path.is_file():
            raise PathError(f"{p[0]}: no such file")
        return _load_text(engine, path.read_text(), origin=p[0],
                          deffacts_only=(code == "LOAD_FACTS"))
    if code == "LOAD_FROM_RESOURCE":
        from importlib import resources
        ref = resources.files("rulehive.data").joinpath("programs").joinpath(p[0])
        if not ref.is_file():
            raise PathError(f"no bundled resource named {p[0]}")
        return _load_text(engine, ref.read_text(), origin=f"resource {p[0]}",
                          deffacts_only=False)
    if code == "LOAD_FROM_STRING":
        return _load_text(engine, p[0], origin="string", deffacts_only=False)
    if code in ("LOAD_ASSERT_STRING", "MAKE_ASSERT_STRING"):
        head, slots = parse_fact_string(p[0])
        fact = engine.assert_fact(head, slots)
        trace = engine.take_output()
        tail = f"f-{fact.index}" if fact else "FALSE"
        return f"{trace}\n{tail}" if trace else tail
    if code == "LOAD_BLOAD":
        path = resolve_agent_path(workdir, p[0], (".dump.bin",))
        engine.restore_binary(path.read_bytes())
        return f"restored binary snapshot from {p[0]}"
    if code == "LOAD_SLOAD":
        path = resolve_agent_path(workdir, p[0], (".dump.txt",))
        engine.restore_text(path.read_text())
        return f"restored text snapshot from {p[0]}"

    if code == "RUN_INFINITELY":
        return shell.eval("(run)")
    if code == "RUN_NUMBER_OF_CYCLES":
        n = _int_param(action, 0)
        if n < 0:
            raise EvalError(f"{code}: cycle count must be non-negative")
        return shell.eval(f"(run {n})")
    if code == "RUN_ONCE_THEN_BATCH":
        return shell.eval("(run 1)")
    if code == "RUN_INNER_SHELL":
        # unreachable via messages (refused as DEV_ONLY before dispatch);
        # consoles get a shell through the gateway's synchronous channel
        raise EvalError("RUN_INNER_SHELL has no remote form")

    if code == "MAKE_RESET":
        return shell.eval("(reset)")
    if code == "MAKE_CLEAR":
        return shell.eval("(clear)")
    if code == "MAKE_MEMORY_DUMP":
        path = resolve_agent_path(workdir, p[0], _DUMP_SUFFIXES)
        path.parent.mkdir(parents=True, exist_ok=True)
        if p[0].endswith(".dump.bin"):
            path.write_bytes(engine.snapshot_binary())
            return f"wrote binary snapshot to {p[0]}"
        path.write_text(engine.snapshot_text())
        return f"wrote text snapshot to {p[0]}"
    if code == "MAKE_BUILD":
        return f"added {engine.build(p[0])}"
    if code == "EVAL_COMMAND":
        return shell.eval(p[0])

    if code == "SET_INPUT_BUFFER_COUNT":
        return str(len(engine.input_buffer))
    if code == "APPEND_INPUT_BUFFER":
        engine.input_buffer += p[0]
        return str(len(engine.input_buffer))

    if code == "SET_WATCH":
        return shell.eval(f"(watch {p[0]})")
    if code == "SET_UNWATCH":
        return shell.eval(f"(unwatch {p[0]})")

    if code == "GET_FACT_SLOT":
        value = engine.get_fact_slot(_int_param(action, 0), _int_param(action, 1))
        return render_atom(value)
    if code == "FACT_INDEX":
        return f"f-{engine.move_cursor(_int_param(action, 0))}"

    raise EvalError(f"no dispatch for {code}")   # unreachable: vocabulary is closed
