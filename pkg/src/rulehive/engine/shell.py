"""Interactive command surface over an Engine.

One command in, one text result out.  This is what development consoles
talk to and what the EVAL action executes.  Commands are s-expressions:

    (facts) (rules) (agenda) (run [n]) (reset) (clear)
    (assert (head atom*)) (retract f-N|N)
    (watch facts|rules|activations) (unwatch ...)
    (solve-sudoku "<81 chars>") (burn <ms>)

Errors are raised, not printed; callers decide how to present them.
"""

from __future__ import annotations

import hashlib
import time

from ..errors import EvalError, UnknownCommandError
from .core import Engine, RUN_UNBOUNDED, WATCH_CATEGORIES
from .parser import Symbol, is_variable, read_forms, render_atom, _fact_body
from .sudoku import solve as solve_sudoku

# 4 MiB per hash round: the interpreter lock is released for the whole
# update, so other threads run freely during a round; the in-between loop
# bookkeeping (where the lock is briefly held) happens only every few
# milliseconds.  Overshoot per burn is bounded by one round.
_BURN_BLOCK = b"\xa5" * (4 << 20)


def burn(ms: int) -> tuple[int, str]:
    """Spin the CPU for ``ms`` milliseconds of chained hashing.

    Returns (rounds, digest) so the work is checkable and can't be elided.
    The loop re-reads the clock every round, so overshoot is bounded by a
    single round (~a millisecond).
    """

    deadline = time.monotonic() + ms / 1000.0
    h = hashlib.sha256()
    rounds = 0
    while time.monotonic() < deadline:
        h.update(_BURN_BLOCK)
        rounds += 1
    return rounds, h.hexdigest()


class EngineShell:
    def __init__(self, engine: Engine):
        self.engine = engine

    def eval(self, command: str) -> str:
        """Evaluate one command string and return its printed output."""

        forms = read_forms(command)
        if len(forms) != 1:
            raise EvalError("expected exactly one (command ...) form")
        form = forms[0]
        if not form or not isinstance(form[0], Symbol):
            raise EvalError("a command starts with a symbol")
        name = str(form[0])
        handler = getattr(self, "_cmd_" + name.replace("-", "_"), None)
        if handler is None:
            raise UnknownCommandError(f"({name})")
        return handler(form[1:])

    # Each handler returns the full output text.  Handlers that mutate the
    # engine prepend whatever watch lines the mutation produced.

    @staticmethod
    def _no_args(args, name):
        if args:
            raise EvalError(f"({name}) takes no arguments")

    def _cmd_facts(self, args):
        self._no_args(args, "facts")
        return "\n".join(f"f-{f.index} {f.render()}" for f in self.engine.fact_list())

    def _cmd_rules(self, args):
        self._no_args(args, "rules")
        return "\n".join(self.engine.rules)

    def _cmd_agenda(self, args):
        self._no_args(args, "agenda")
        return "\n".join(a.render() for a in self.engine.agenda())

    def _cmd_run(self, args):
        if len(args) > 1 or (args and not isinstance(args[0], int)):
            raise EvalError("(run) takes an optional integer cycle count")
        limit = args[0] if args else RUN_UNBOUNDED
        count = self.engine.run(limit)
        trace = self.engine.take_output()
        tail = f"{count} rules fired"
        return f"{trace}\n{tail}" if trace else tail

    def _cmd_reset(self, args):
        self._no_args(args, "reset")
        self.engine.reset()
        return self.engine.take_output()

    def _cmd_clear(self, args):
        self._no_args(args, "clear")
        self.engine.clear()
        return ""

    def _cmd_assert(self, args):
        if len(args) != 1:
            raise EvalError("(assert) takes exactly one fact form")
        head, slots = _fact_body(args[0], allow_vars=False, context="assert")
        fact = self.engine.assert_fact(head, slots)
        trace = self.engine.take_output()
        tail = f"f-{fact.index}" if fact else "FALSE"
        return f"{trace}\n{tail}" if trace else tail

    def _cmd_retract(self, args):
        if len(args) != 1:
            raise EvalError("(retract) takes a fact index like 3 or f-3")
        ref = args[0]
        if isinstance(ref, Symbol) and str(ref).startswith("f-"):
            try:
                ref = int(str(ref)[2:])
            except ValueError:
                raise EvalError(f"bad fact reference {ref}") from None
        if not isinstance(ref, int):
            raise EvalError(f"bad fact reference {render_atom(ref)}")
        self.engine.retract_fact(ref)
        return self.engine.take_output()

    def _watch_arg(self, args, name):
        if len(args) != 1 or not isinstance(args[0], Symbol) or is_variable(args[0]):
            raise EvalError(f"({name}) takes one category: " + ", ".join(WATCH_CATEGORIES))
        cat = str(args[0])
        if cat not in WATCH_CATEGORIES:
            raise EvalError(f"unknown watch category {cat}")
        return cat

    def _cmd_watch(self, args):
        self.engine.watching.add(self._watch_arg(args, "watch"))
        return ""

    def _cmd_unwatch(self, args):
        self.engine.watching.discard(self._watch_arg(args, "unwatch"))
        return ""

    def _cmd_solve_sudoku(self, args):
        if len(args) != 1 or not isinstance(args[0], str) or isinstance(args[0], Symbol):
            raise EvalError('(solve-sudoku) takes one quoted 81-character grid')
        return solve_sudoku(args[0])

    def _cmd_burn(self, args):
        if len(args) != 1 or not isinstance(args[0], int) or args[0] < 0:
            raise EvalError("(burn) takes a non-negative integer millisecond count")
        started = time.monotonic()
        rounds, digest = burn(args[0])
        elapsed = (time.monotonic() - started) * 1000.0
        return f"burned {elapsed:.1f} ms in {rounds} rounds, digest {digest[:12]}"
