"""Working memory, the match/fire loop, and snapshot/restore.

Facts are ordered tuples indexed from 0; indices are never reused within a
lifetime of the working memory (``reset`` starts over from 0).  Matching is
naive and recomputed per cycle — working memories here are small and the
payoff is that the agenda is trivially auditable.

Conflict resolution is a total order: higher salience first, then recency
(larger newest-fact index in the matched combination first), then rule name
ascending, then the combination itself, newest-leaning first.  A rule never
fires twice on the same fact combination (refraction).
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass

from ..errors import (
    CycleCapExceededError,
    DuplicateConstructError,
    EngineBusyError,
    EngineParseError,
    NoSuchFactError,
    NoSuchSlotError,
    SnapshotError,
)
from .parser import (
    Atom,
    Deffacts,
    Pattern,
    Rule,
    Symbol,
    is_variable,
    parse_program,
    render_construct,
    render_fact,
    read_forms,
    _fact_body,
)

RUN_UNBOUNDED = None
DEFAULT_CYCLE_CAP = 1_000_000

WATCH_CATEGORIES = ("facts", "rules", "activations")

_TEXT_MAGIC = ";;! rulehive-dump 1"
_BINARY_MAGIC = b"RHBIN1 "


@dataclass(frozen=True, slots=True)
class Fact:
    index: int
    head: str
    slots: tuple[Atom, ...]

    def render(self) -> str:
        return render_fact(self.head, self.slots)

    def value(self) -> tuple:
        return (self.head, self.slots)


@dataclass(frozen=True, slots=True)
class Activation:
    rule: Rule
    combo: tuple[int, ...]          # matched fact indices, one per pattern
    bindings: dict

    def render(self) -> str:
        refs = ",".join(f"f-{i}" for i in self.combo)
        return f"{self.rule.salience} {self.rule.name}: {refs}"


def _agenda_sort_key(act: Activation):
    newest_first = tuple(-i for i in act.combo)
    return (-act.rule.salience, -max(act.combo), act.rule.name, newest_first)


class Engine:
    """One private production system instance."""

    def __init__(self, cycle_cap: int = DEFAULT_CYCLE_CAP):
        self.cycle_cap = cycle_cap
        self.rules: dict[str, Rule] = {}
        self.deffacts: list[Deffacts] = []
        self.facts: dict[int, Fact] = {}
        self.next_fact_index = 0
        self.fired: set[tuple[str, tuple[int, ...]]] = set()
        self.watching: set[str] = set()
        self.input_buffer = ""
        self.cursor: int | None = None
        self._fact_values: dict[tuple, int] = {}
        self._pending: list[str] = []
        self._last_agenda: tuple[tuple[str, tuple[int, ...]], ...] | None = None
        self._in_use = False
        self._use_lock = threading.Lock()

    # --- exclusivity -------------------------------------------------------
    # An engine serves exactly one piece of work at a time.  The flag is an
    # invariant check, not a wait: a second acquisition is a caller bug (or,
    # for try_acquire, an expected busy signal).

    def acquire(self) -> None:
        with self._use_lock:
            if self._in_use:
                raise EngineBusyError("engine already in use")
            self._in_use = True

    def try_acquire(self) -> bool:
        with self._use_lock:
            if self._in_use:
                return False
            self._in_use = True
            return True

    def release(self) -> None:
        with self._use_lock:
            self._in_use = False

    @property
    def in_use(self) -> bool:
        return self._in_use

    # --- output capture ------------------------------------------------------

    def take_output(self) -> str:
        """Drain printout/watch lines produced since the last drain."""

        text = "\n".join(self._pending)
        self._pending = []
        return text

    def _emit(self, line: str) -> None:
        self._pending.append(line)

    # --- construct loading ---------------------------------------------------

    def load_constructs(self, constructs: list[Rule | Deffacts]) -> int:
        """Add parsed constructs; duplicate names (per construct kind) are
        rejected and nothing from the batch is applied."""

        new_rules: dict[str, Rule] = {}
        new_deffacts: list[Deffacts] = []
        for c in constructs:
            if isinstance(c, Rule):
                if c.name in self.rules or c.name in new_rules:
                    raise DuplicateConstructError(f"defrule {c.name} already defined")
                new_rules[c.name] = c
            else:
                taken = {d.name for d in self.deffacts} | {d.name for d in new_deffacts}
                if c.name in taken:
                    raise DuplicateConstructError(f"deffacts {c.name} already defined")
                new_deffacts.append(c)
        self.rules.update(new_rules)
        self.deffacts.extend(new_deffacts)
        if new_rules and "activations" in self.watching:
            self._refresh_agenda_watch()
        return len(constructs)

    def load_program(self, text: str) -> int:
        return self.load_constructs(parse_program(text))

    def build(self, text: str) -> str:
        """Add exactly one construct given as source text."""

        constructs = parse_program(text)
        if len(constructs) != 1:
            raise EngineParseError("expected exactly one construct")
        self.load_constructs(constructs)
        return constructs[0].name

    # --- working memory --------------------------------------------------------

    def assert_fact(self, head: str, slots: tuple[Atom, ...]) -> Fact | None:
        """Add an ordered fact; returns None if an equal fact already exists."""

        key = (head, tuple(slots))
        if key in self._fact_values:
            return None
        fact = Fact(index=self.next_fact_index, head=head, slots=tuple(slots))
        self.next_fact_index += 1
        self.facts[fact.index] = fact
        self._fact_values[key] = fact.index
        if "facts" in self.watching:
            self._emit(f"==> f-{fact.index} {fact.render()}")
        if "activations" in self.watching:
            self._refresh_agenda_watch()
        return fact

    def retract_fact(self, index: int) -> Fact:
        fact = self.facts.get(index)
        if fact is None:
            raise NoSuchFactError(f"f-{index} does not exist")
        del self.facts[index]
        del self._fact_values[fact.value()]
        if self.cursor == index:
            self.cursor = None
        if "facts" in self.watching:
            self._emit(f"<== f-{fact.index} {fact.render()}")
        if "activations" in self.watching:
            self._refresh_agenda_watch()
        return fact

    def fact_list(self) -> list[Fact]:
        return [self.facts[i] for i in sorted(self.facts)]

    def get_fact_slot(self, index: int, slot: int) -> Atom:
        fact = self.facts.get(index)
        if fact is None:
            raise NoSuchFactError(f"f-{index} does not exist")
        if not 0 <= slot < len(fact.slots):
            raise NoSuchSlotError(f"f-{index} has {len(fact.slots)} slot(s), no slot {slot}")
        return fact.slots[slot]

    def move_cursor(self, delta: int) -> int:
        """Move the fact cursor by ``delta`` across the ordered fact list,
        clamping at both ends; returns the fact index under the cursor."""

        order = sorted(self.facts)
        if not order:
            raise NoSuchFactError("working memory is empty")
        pos = order.index(self.cursor) if self.cursor in self.facts else 0
        pos = max(0, min(len(order) - 1, pos + delta))
        self.cursor = order[pos]
        return self.cursor

    # --- matching -----------------------------------------------------------

    def _match_pattern(self, pattern: Pattern, bindings: dict) -> list[tuple[Fact, dict]]:
        out = []
        for idx in sorted(self.facts):
            fact = self.facts[idx]
            if fact.head != pattern.head or len(fact.slots) != len(pattern.terms):
                continue
            env = dict(bindings)
            for term, value in zip(pattern.terms, fact.slots):
                if is_variable(term):
                    name = str(term)
                    if name in env:
                        if env[name] != value:
                            break
                    else:
                        env[name] = value
                elif term != value:
                    break
            else:
                out.append((fact, env))
        return out

    def _activations(self) -> list[Activation]:
        acts: list[Activation] = []
        for rule in self.rules.values():
            partial: list[tuple[tuple[int, ...], dict]] = [((), {})]
            for pattern in rule.patterns:
                grown = []
                for combo, env in partial:
                    for fact, env2 in self._match_pattern(pattern, env):
                        grown.append((combo + (fact.index,), env2))
                partial = grown
                if not partial:
                    break
            acts.extend(Activation(rule, combo, env) for combo, env in partial)
        return acts

    def agenda(self) -> list[Activation]:
        """Eligible activations (refraction applied) in firing order."""

        acts = [a for a in self._activations() if (a.rule.name, a.combo) not in self.fired]
        acts.sort(key=_agenda_sort_key)
        return acts

    def _refresh_agenda_watch(self) -> None:
        current = tuple((a.rule.name, a.combo) for a in self.agenda())
        before = set(self._last_agenda or ())
        after = set(current)
        for name, combo in sorted(after - before):
            refs = ",".join(f"f-{i}" for i in combo)
            self._emit(f"==> activation {name}: {refs}")
        for name, combo in sorted(before - after):
            refs = ",".join(f"f-{i}" for i in combo)
            self._emit(f"<== activation {name}: {refs}")
        self._last_agenda = current

    # --- firing ---------------------------------------------------------------

    def _substitute(self, terms: tuple[Atom, ...], bindings: dict) -> tuple[Atom, ...]:
        return tuple(bindings[str(t)] if is_variable(t) else t for t in terms)

    def _execute(self, act: Activation) -> None:
        for action in act.rule.actions:
            if action.kind == "assert":
                self.assert_fact(action.head, self._substitute(action.terms, act.bindings))
            elif action.kind == "retract":
                slots = self._substitute(action.terms, act.bindings)
                idx = self._fact_values.get((action.head, slots))
                if idx is not None:    # retracting an absent fact is a no-op
                    self.retract_fact(idx)
            else:
                parts = []
                for t in self._substitute(action.terms, act.bindings):
                    if t == Symbol("crlf"):
                        parts.append("\n")
                    elif isinstance(t, Symbol):
                        parts.append(str(t))
                    elif isinstance(t, str):
                        parts.append(t)   # printout writes string contents, unquoted
                    else:
                        parts.append(str(t))
                self._emit("".join(parts).rstrip("\n"))

    def run(self, limit: int | None = RUN_UNBOUNDED) -> int:
        """Fire rules until the agenda empties or ``limit`` is reached.

        Unbounded runs stop at the safety cap; if the agenda still has work
        at that point the run fails with CYCLE_CAP_EXCEEDED (the count of
        rules fired so far travels with the error).
        """

        cap = self.cycle_cap if limit is RUN_UNBOUNDED else max(0, limit)
        count = 0
        while count < cap:
            agenda = self.agenda()
            if not agenda:
                return count
            act = agenda[0]
            self.fired.add((act.rule.name, act.combo))
            if "rules" in self.watching:
                refs = ",".join(f"f-{i}" for i in act.combo)
                self._emit(f"FIRE {count + 1} {act.rule.name}: {refs}")
            self._execute(act)
            count += 1
        if limit is RUN_UNBOUNDED and self.agenda():
            raise CycleCapExceededError(f"agenda not empty after {count} firings", fired=count)
        return count

    # --- lifecycle --------------------------------------------------------------

    def reset(self) -> None:
        """Empty working memory, restart fact numbering at 0, re-assert all
        deffacts in definition order.  Rules and watch settings survive."""

        self.facts.clear()
        self._fact_values.clear()
        self.fired.clear()
        self.cursor = None
        self.next_fact_index = 0
        for d in self.deffacts:
            for head, slots in d.facts:
                self.assert_fact(head, slots)

    def clear(self) -> None:
        """Forget everything: rules, deffacts, facts, watches, buffers."""

        self.rules.clear()
        self.deffacts.clear()
        self.facts.clear()
        self._fact_values.clear()
        self.fired.clear()
        self.watching.clear()
        self.input_buffer = ""
        self.cursor = None
        self.next_fact_index = 0
        self._pending = []
        self._last_agenda = None

    # --- snapshots ---------------------------------------------------------------

    def snapshot_text(self) -> str:
        """Full engine state as directive comments plus canonical source.

        The payload parses under the normal program grammar (directives are
        comments), and restoring it reproduces the same fact listing, rule
        listing and counters.
        """

        lines = [_TEXT_MAGIC, f";;! next-index {self.next_fact_index}"]
        if self.cursor is not None:
            lines.append(f";;! cursor {self.cursor}")
        if self.input_buffer:
            lines.append(f";;! input-buffer {json.dumps(self.input_buffer)}")
        for cat in sorted(self.watching):
            lines.append(f";;! watch {cat}")
        for name, combo in sorted(self.fired):
            lines.append(f";;! fired {name} {','.join(map(str, combo))}")
        for fact in self.fact_list():
            lines.append(f";;! fact {fact.index} {fact.render()}")
        for d in self.deffacts:
            lines.append(render_construct(d))
        for r in self.rules.values():
            lines.append(render_construct(r))
        return "\n".join(lines) + "\n"

    def snapshot_binary(self) -> bytes:
        payload = self.snapshot_text().encode("utf-8")
        digest = hashlib.sha256(payload).hexdigest()
        return _BINARY_MAGIC + digest.encode("ascii") + b"\n" + payload

    def restore_text(self, text: str) -> None:
        lines = text.splitlines()
        if not lines or lines[0].strip() != _TEXT_MAGIC:
            raise SnapshotError("not a text snapshot (missing version header)")
        directives = []
        for ln in lines[1:]:
            if ln.startswith(";;!"):
                directives.append(ln[3:].strip())
        constructs = parse_program(text)   # directives are comments to the grammar

        staged_facts: list[tuple[int, str, tuple[Atom, ...]]] = []
        next_index = 0
        cursor = None
        input_buffer = ""
        watching: set[str] = set()
        fired: set[tuple[str, tuple[int, ...]]] = set()
        for d in directives:
            kw, _, rest = d.partition(" ")
            try:
                if kw == "next-index":
                    next_index = int(rest)
                elif kw == "cursor":
                    cursor = int(rest)
                elif kw == "input-buffer":
                    input_buffer = json.loads(rest)
                elif kw == "watch":
                    if rest not in WATCH_CATEGORIES:
                        raise ValueError(rest)
                    watching.add(rest)
                elif kw == "fired":
                    rule_name, _, combo_text = rest.partition(" ")
                    combo = tuple(int(x) for x in combo_text.split(",") if x != "")
                    fired.add((rule_name, combo))
                elif kw == "fact":
                    idx_text, _, body = rest.partition(" ")
                    head, slots = _fact_body(read_forms(body)[0], allow_vars=False,
                                             context="snapshot fact")
                    staged_facts.append((int(idx_text), head, slots))
                else:
                    raise ValueError(kw)
            except (ValueError, IndexError, EngineParseError, json.JSONDecodeError) as exc:
                raise SnapshotError(f"bad directive {d!r}: {exc}") from None

        self.clear()
        self.load_constructs(constructs)
        for idx, head, slots in staged_facts:
            if idx >= next_index or idx in self.facts:
                raise SnapshotError(f"inconsistent fact index {idx}")
            fact = Fact(index=idx, head=head, slots=slots)
            self.facts[idx] = fact
            self._fact_values[fact.value()] = idx
        self.next_fact_index = next_index
        self.cursor = cursor if cursor in self.facts else None
        self.input_buffer = input_buffer
        self.watching = watching
        self.fired = fired
        self._pending = []
        self._last_agenda = None

    def restore_binary(self, blob: bytes) -> None:
        if not blob.startswith(_BINARY_MAGIC):
            raise SnapshotError("not a binary snapshot (missing magic)")
        header, _, payload = blob.partition(b"\n")
        digest = header[len(_BINARY_MAGIC):].decode("ascii", "replace")
        if hashlib.sha256(payload).hexdigest() != digest:
            raise SnapshotError("checksum mismatch")
        self.restore_text(payload.decode("utf-8"))
