"""Staged bring-up of an agent's behavior set, driven by script files.

An agent's working directory may hold one script per level — ``level.00.rbs``,
``level.01.rbs``, ``level.03.rbs``, ``level.05.rbs`` — each declaring
behaviors in a small s-expression dialect (see ``parse_behavior_script``).
Levels mean:

    0   level.00 additions are loaded (nothing is active)
    1   basal behaviors from level.01 are loaded, still inactive
    3   level.03 additions load; everything level 1 loaded becomes active
    5   level.05 additions load and activate, as does whatever level 3
        loaded; the agent is "in service"
    6   hot reboot: every behavior is torn down, the message queue and the
        platform registration survive, and the agent re-enters level 0 with
        a fresh read of level.00

Only those five targets exist (2 and 4 are invalid), transitions only go
upward (apart from 6), and script files are re-read on every transition —
editing a script then requesting the level again picks up the change.
A missing script file simply contributes nothing.  A malformed script
aborts the whole transition before any step is applied.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

from .acl import (
    AclMessage,
    AgentId,
    Performative,
    create_reply,
    new_conversation_id,
)
from .engine.parser import Symbol, read_forms
from .errors import EngineParseError, InvalidRunlevelError, ScriptError
from .ruleagent import EngineJobFsm, handle_engine_request
from .runtime import Agent, Behavior, BehaviorKind, ReceiveTemplate

VALID_RUNLEVELS = (0, 1, 3, 5, 6)

#: levels that read a script, in ascending order, with their file names
SCRIPT_FILES = {
    0: "level.00.rbs",
    1: "level.01.rbs",
    3: "level.03.rbs",
    5: "level.05.rbs",
}


@dataclass(frozen=True, slots=True)
class BehaviorDescriptor:
    """Parsed form of one ``(behavior ...)`` declaration."""

    name: str
    kind: BehaviorKind
    template: ReceiveTemplate | None
    period_ms: int | None
    actions: tuple[tuple, ...]


class ScriptedBehavior(Behavior):
    """Interpreter for descriptor-declared behaviors.

    Message-triggered ones consume at most one matching message per step;
    timer ones come due every ``period_ms``.  The action vocabulary is
    closed: reply-with-text, forward-to-engine, send-message, set-runlevel.
    """

    def __init__(self, desc: BehaviorDescriptor):
        super().__init__(desc.name)
        self.kind = desc.kind
        self.desc = desc
        self._deadline: float | None = None

    def next_due(self) -> float | None:
        if self.desc.period_ms is None:
            return None
        if self._deadline is None:
            self._deadline = time.monotonic() + self.desc.period_ms / 1000.0
        return self._deadline

    def step(self, agent: Agent) -> bool:
        trigger = None
        if self.desc.template is not None:
            trigger = agent.queue.take(self.desc.template)
            if trigger is None:
                return False
        if self.desc.period_ms is not None:
            self._deadline = time.monotonic() + self.desc.period_ms / 1000.0
        for act in self.desc.actions:
            self._run_action(agent, act, trigger)
        return True

    def _run_action(self, agent: Agent, action: tuple, trigger: AclMessage | None) -> None:
        op, args = action[0], action[1:]
        if op == "reply-with-text":
            if trigger is not None:
                agent.send(create_reply(trigger, Performative.INFORM, agent.id, args[0]))
        elif op == "forward-to-engine":
            if trigger is not None:
                handle_engine_request(agent, trigger)
        elif op == "send-message":
            to, performative, ontology, content, conversation = args
            agent.send(AclMessage(
                performative=performative,
                sender=agent.id,
                receivers=(AgentId(to),),
                conversation_id=conversation or new_conversation_id(agent.name),
                content=content,
                ontology=ontology,
            ))
        elif op == "set-runlevel":
            set_runlevel(agent, args[0])
        else:   # parse_behavior_script only emits the four ops above
            raise ScriptError(f"behavior {self.name}: unknown action {op}")


# --- script parsing -----------------------------------------------------------

_KINDS = {
    "one-shot": BehaviorKind.ONE_SHOT,
    "cyclic": BehaviorKind.CYCLIC,
    "fsm": BehaviorKind.FSM,
}


def _clause_map(forms, context: str) -> dict[str, tuple]:
    out: dict[str, tuple] = {}
    for form in forms:
        if not isinstance(form, tuple) or not form or not isinstance(form[0], Symbol):
            raise ScriptError(f"{context}: expected (clause ...) forms")
        key = str(form[0])
        if key in out:
            raise ScriptError(f"{context}: duplicate clause ({key} ...)")
        out[key] = form[1:]
    return out


def _parse_template(args, context: str) -> ReceiveTemplate:
    fields: dict = {}
    for clause in args:
        if not isinstance(clause, tuple) or len(clause) != 2 or not isinstance(clause[0], Symbol):
            raise ScriptError(f"{context}: (on ...) clauses look like (ontology \"x\")")
        key, value = str(clause[0]), clause[1]
        if key == "performative":
            try:
                fields["performative"] = Performative(str(value))
            except ValueError:
                raise ScriptError(f"{context}: unknown performative {value}") from None
        elif key in ("ontology", "conversation", "in-reply-to"):
            if not isinstance(value, str) or isinstance(value, Symbol):
                raise ScriptError(f"{context}: ({key} ...) takes a quoted string")
            target = {"ontology": "ontology", "conversation": "conversation_id",
                      "in-reply-to": "in_reply_to"}[key]
            fields[target] = value
        else:
            raise ScriptError(f"{context}: unknown template field {key}")
    return ReceiveTemplate(**fields)


def _parse_action(form, context: str) -> tuple:
    if not isinstance(form, tuple) or not form or not isinstance(form[0], Symbol):
        raise ScriptError(f"{context}: actions are (op ...) forms")
    op = str(form[0])
    args = form[1:]
    if op == "reply-with-text":
        if len(args) != 1 or not isinstance(args[0], str) or isinstance(args[0], Symbol):
            raise ScriptError(f"{context}: (reply-with-text) takes one quoted string")
        return ("reply-with-text", args[0])
    if op == "forward-to-engine":
        if args:
            raise ScriptError(f"{context}: (forward-to-engine) takes no arguments")
        return ("forward-to-engine",)
    if op == "send-message":
        clauses = _clause_map(args, f"{context} send-message")
        unknown = set(clauses) - {"to", "performative", "ontology", "content", "conversation"}
        if unknown:
            raise ScriptError(f"{context}: send-message has unknown clauses {sorted(unknown)}")
        for required in ("to", "performative"):
            if required not in clauses:
                raise ScriptError(f"{context}: send-message needs ({required} ...)")
        def one(key, default=None, *, quoted=False):
            if key not in clauses:
                return default
            vals = clauses[key]
            if len(vals) != 1:
                raise ScriptError(f"{context}: ({key} ...) takes one value")
            v = vals[0]
            if quoted and (not isinstance(v, str) or isinstance(v, Symbol)):
                raise ScriptError(f"{context}: ({key} ...) takes a quoted string")
            return v
        try:
            performative = Performative(str(one("performative")))
        except ValueError:
            raise ScriptError(f"{context}: unknown performative") from None
        return ("send-message", str(one("to")), performative,
                one("ontology", "", quoted=True), one("content", "", quoted=True),
                one("conversation", None, quoted=True))
    if op == "set-runlevel":
        if len(args) != 1 or not isinstance(args[0], int):
            raise ScriptError(f"{context}: (set-runlevel) takes an integer")
        return ("set-runlevel", args[0])
    raise ScriptError(f"{context}: unknown action ({op} ...)")


def parse_behavior_script(text: str, *, source: str = "script") -> list[BehaviorDescriptor]:
    """Parse one ``.rbs`` file into descriptors; any defect raises
    SCRIPT_ERROR naming the file and the offending behavior."""

    try:
        forms = read_forms(text)
    except EngineParseError as exc:
        raise ScriptError(f"{source}: {exc}") from None
    descriptors = []
    names: set[str] = set()
    for form in forms:
        if not form or form[0] != Symbol("behavior"):
            raise ScriptError(f"{source}: top-level forms must be (behavior ...)")
        if len(form) < 2 or not isinstance(form[1], Symbol):
            raise ScriptError(f"{source}: behavior needs a symbol name")
        name = str(form[1])
        context = f"{source}: behavior {name}"
        if name in names:
            raise ScriptError(f"{context} declared twice")
        names.add(name)
        clauses = _clause_map(form[2:], context)
        unknown = set(clauses) - {"kind", "on", "every", "do"}
        if unknown:
            raise ScriptError(f"{context}: unknown clauses {sorted(unknown)}")
        if "kind" not in clauses or len(clauses["kind"]) != 1:
            raise ScriptError(f"{context}: needs exactly one (kind ...)")
        kind_name = str(clauses["kind"][0])
        kind = _KINDS.get(kind_name)
        if kind is None:
            raise ScriptError(f"{context}: unknown kind {kind_name}")
        template = _parse_template(clauses["on"], context) if "on" in clauses else None
        period = None
        if "every" in clauses:
            vals = clauses["every"]
            if len(vals) != 1 or not isinstance(vals[0], int) or vals[0] <= 0:
                raise ScriptError(f"{context}: (every ...) takes a positive millisecond count")
            period = vals[0]
        actions = tuple(_parse_action(a, context) for a in clauses.get("do", ()))

        if kind is BehaviorKind.FSM:
            if template or period or actions:
                raise ScriptError(f"{context}: kind fsm takes no on/every/do clauses")
        else:
            if template is not None and period is not None:
                raise ScriptError(f"{context}: pick one trigger, (on ...) or (every ...)")
            if kind is BehaviorKind.CYCLIC and template is None and period is None:
                raise ScriptError(f"{context}: a cyclic behavior needs a trigger")
            if not actions and "do" not in clauses:
                raise ScriptError(f"{context}: needs a (do ...) clause")
        descriptors.append(BehaviorDescriptor(name=name, kind=kind, template=template,
                                              period_ms=period, actions=actions))
    return descriptors


def instantiate(desc: BehaviorDescriptor) -> Behavior:
    if desc.kind is BehaviorKind.FSM:
        fsm = EngineJobFsm()
        fsm.name = desc.name
        return fsm
    return ScriptedBehavior(desc)


# --- the ladder -----------------------------------------------------------------

def _read_script(agent: Agent, level: int) -> list[BehaviorDescriptor]:
    if agent.workdir is None:
        return []
    path = agent.workdir / SCRIPT_FILES[level]
    if not path.is_file():
        return []   # nothing to contribute at this level
    return parse_behavior_script(path.read_text(), source=path.name)


def set_runlevel(agent: Agent, target: int) -> dict:
    """Drive the agent to ``target``, returning what was loaded/activated.

    Scripts for every step are parsed up front, so a defective file leaves
    the agent exactly where it was.
    """

    if target not in VALID_RUNLEVELS:
        raise InvalidRunlevelError(f"{target}; valid levels are {VALID_RUNLEVELS}")
    current = agent.runlevel

    if target == 6:
        removed = [b.name for b in agent.behaviors if not b.system]
        scripts = {0: _read_script(agent, 0)}
        report = _apply_reboot(agent, scripts[0])
        report["removed"] = removed
        return report

    if current is not None and target == current:
        return {"runlevel": current, "loaded": [], "activated": []}
    if current is not None and target < current:
        raise InvalidRunlevelError(
            f"cannot go from {current} down to {target}; use 6 to reboot")

    steps = [lvl for lvl in (0, 1, 3, 5)
             if (current is None or lvl > current) and lvl <= target]
    scripts = {lvl: _read_script(agent, lvl) for lvl in steps}   # parse first
    loaded: list[str] = []
    activated: list[str] = []
    for lvl in steps:
        loaded_here, activated_here = _apply_level(agent, lvl, scripts[lvl])
        loaded.extend(loaded_here)
        activated.extend(activated_here)
        agent.runlevel = lvl
    agent.in_service = agent.runlevel == 5
    agent.trace("runlevel", {"runlevel": agent.runlevel})
    return {"runlevel": agent.runlevel, "loaded": loaded, "activated": activated}


def _apply_level(agent: Agent, level: int, descs: list[BehaviorDescriptor]):
    """Level semantics: 0 and 1 load inactive; 3 loads inactive and wakes
    level-1 loads; 5 loads active and wakes level-3 loads."""

    loaded = []
    activated = []
    for desc in descs:
        behavior = instantiate(desc)
        behavior.loaded_at_level = level
        agent.add_behavior(behavior, active=(level == 5))
        loaded.append(behavior.name)
        if level == 5:
            activated.append(behavior.name)
    wake_from = {3: 1, 5: 3}.get(level)
    if wake_from is not None:
        for behavior in agent.behaviors:
            if behavior.loaded_at_level == wake_from and not behavior.active:
                behavior.active = True
                activated.append(behavior.name)
    if activated:
        agent.notify()
    return loaded, activated


def _apply_reboot(agent: Agent, descs: list[BehaviorDescriptor]) -> dict:
    # The queue, the registration and platform wiring stay; only behaviors
    # the runlevel ladder manages are torn down.
    agent.behaviors[:] = [b for b in agent.behaviors if b.system]
    agent.in_service = False
    loaded, _ = _apply_level(agent, 0, descs)
    agent.runlevel = 0
    agent.trace("runlevel", {"runlevel": 0, "reboot": True})
    return {"runlevel": 0, "loaded": loaded, "activated": []}


def request_runlevel(agent: Agent, target: int) -> dict:
    """Run the transition on the agent's own thread (behavior lists are
    thread-confined); safe to call from gateways, CLIs and tests."""

    return agent.run_control(lambda: set_runlevel(agent, target))


# --- default scripts --------------------------------------------------------------

DEFAULT_SCRIPTS = {
    "level.00.rbs": """\
; Runlevel 0: a freshly (re)booted agent. Nothing to declare; the agent
; just listens for administration.
""",
    "level.01.rbs": """\
; Basal behaviors. Loaded at runlevel 1, switched on at runlevel 3.
(behavior presence
  (kind cyclic)
  (on (performative REQUEST) (ontology "presence"))
  (do (reply-with-text "alive")))

(behavior engine-requests
  (kind cyclic)
  (on (performative REQUEST) (ontology "rbe-actions"))
  (do (forward-to-engine)))
""",
    "level.03.rbs": """\
; The engine job machine: executes accepted work off-thread, one job at a
; time, and sends the terminal reply. Active once runlevel 5 is reached.
(behavior engine-jobs
  (kind fsm))
""",
    "level.05.rbs": """\
; Service-level additions. None by default; this is the file to extend.
""",
}


def write_default_scripts(directory: Path, *, overwrite: bool = False) -> list[str]:
    written = []
    for name, text in DEFAULT_SCRIPTS.items():
        path = directory / name
        if overwrite or not path.exists():
            path.write_text(text)
            written.append(name)
    return written
