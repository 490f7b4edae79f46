"""Reader and construct builder for the engine's s-expression grammar.

    program   := construct*
    construct := (deffacts <name> <fact-body>*)
               | (defrule <name> [(declare (salience <int>))]
                    <pattern>+ => <action>*)
    fact-body := (<head> <atom>*)
    pattern   := (<head> <term>*)         ; term = atom or ?variable
    action    := (assert <fact-body-with-vars>)
               | (retract <fact-body-with-vars>)
               | (printout t <term>* [crlf])

Atoms are integers, double-quoted strings (``\\"``, ``\\\\``, ``\\n``,
``\\t`` escapes) or bare symbols; ``;`` starts a comment running to end of
line.  Every variable used in an action must be bound by some pattern.
Errors carry line and column of the offending token.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import EngineParseError


class Symbol(str):
    """A bare identifier; distinct from string literals."""

    __slots__ = ()

    def __repr__(self) -> str:
        return f"Symbol({str.__repr__(self)})"


Atom = int | str  # includes Symbol; variables are Symbols starting with "?"


def is_variable(value) -> bool:
    return isinstance(value, Symbol) and value.startswith("?")


# --- tokenizer -------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class _Token:
    kind: str          # "(", ")", "atom", "string"
    text: str
    line: int
    col: int


_DELIMS = "()\";"
_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t"}
_UNESCAPES = {"\n": "\\n", "\t": "\\t", '"': '\\"', "\\": "\\\\"}


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i, line, col = i + 1, line + 1, 1
        elif ch in " \t\r":
            i, col = i + 1, col + 1
        elif ch == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif ch in "()":
            tokens.append(_Token(ch, ch, line, col))
            i, col = i + 1, col + 1
        elif ch == '"':
            start_line, start_col = line, col
            i, col = i + 1, col + 1
            out = []
            while True:
                if i >= n:
                    raise EngineParseError(f"unterminated string at line {start_line}, column {start_col}")
                c = text[i]
                if c == "\\":
                    if i + 1 >= n or text[i + 1] not in _ESCAPES:
                        raise EngineParseError(f"bad string escape at line {line}, column {col}")
                    out.append(_ESCAPES[text[i + 1]])
                    i, col = i + 2, col + 2
                elif c == '"':
                    i, col = i + 1, col + 1
                    break
                elif c == "\n":
                    raise EngineParseError(f"unterminated string at line {start_line}, column {start_col}")
                else:
                    out.append(c)
                    i, col = i + 1, col + 1
            tokens.append(_Token("string", "".join(out), start_line, start_col))
        else:
            start_line, start_col = line, col
            j = i
            while j < n and text[j] not in " \t\r\n" + _DELIMS:
                j += 1
            tokens.append(_Token("atom", text[i:j], start_line, start_col))
            col += j - i
            i = j
    return tokens


def _atom_value(tok: _Token) -> Atom:
    try:
        return int(tok.text)
    except ValueError:
        return Symbol(tok.text)


def read_forms(text: str) -> list:
    """Read every top-level form as nested lists of atoms."""

    tokens = _tokenize(text)
    forms = []
    pos = 0

    def read_one() -> tuple:
        nonlocal pos
        tok = tokens[pos]
        if tok.kind == "(":
            pos += 1
            items = []
            while True:
                if pos >= len(tokens):
                    raise EngineParseError(f"unclosed '(' at line {tok.line}, column {tok.col}")
                if tokens[pos].kind == ")":
                    pos += 1
                    return tuple(items)
                items.append(read_one())
        if tok.kind == ")":
            raise EngineParseError(f"unexpected ')' at line {tok.line}, column {tok.col}")
        pos += 1
        return tok.text if tok.kind == "string" else _atom_value(tok)

    while pos < len(tokens):
        tok = tokens[pos]
        if tok.kind == ")":
            raise EngineParseError(f"unexpected ')' at line {tok.line}, column {tok.col}")
        form = read_one()
        if not isinstance(form, tuple):
            raise EngineParseError(
                f"expected a parenthesized form at line {tok.line}, column {tok.col}")
        forms.append(form)
    return forms


# --- construct ASTs ---------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Pattern:
    head: str
    terms: tuple[Atom, ...]

    def variables(self) -> set[str]:
        return {t for t in self.terms if is_variable(t)}


@dataclass(frozen=True, slots=True)
class Action:
    kind: str                 # "assert" | "retract" | "printout"
    head: str | None          # fact head for assert/retract
    terms: tuple[Atom, ...]   # slot terms, or printout items


@dataclass(frozen=True, slots=True)
class Rule:
    name: str
    salience: int
    patterns: tuple[Pattern, ...]
    actions: tuple[Action, ...]


@dataclass(frozen=True, slots=True)
class Deffacts:
    name: str
    facts: tuple[tuple[str, tuple[Atom, ...]], ...]  # (head, slots) pairs


def _require_name(form, what: str) -> str:
    if len(form) < 2 or not isinstance(form[1], Symbol) or is_variable(form[1]):
        raise EngineParseError(f"{what} needs a symbol name")
    return str(form[1])


def _fact_body(form, *, allow_vars: bool, context: str) -> tuple[str, tuple[Atom, ...]]:
    if not isinstance(form, tuple) or not form:
        raise EngineParseError(f"{context}: expected a non-empty (head ...) form")
    head = form[0]
    if not isinstance(head, Symbol) or is_variable(head):
        raise EngineParseError(f"{context}: fact head must be a plain symbol")
    for t in form[1:]:
        if isinstance(t, tuple):
            raise EngineParseError(f"{context}: nested forms are not allowed in fact slots")
        if is_variable(t) and not allow_vars:
            raise EngineParseError(f"{context}: variables are not allowed here")
    return str(head), tuple(form[1:])


def _build_deffacts(form) -> Deffacts:
    name = _require_name(form, "deffacts")
    bodies = tuple(_fact_body(f, allow_vars=False, context=f"deffacts {name}")
                   for f in form[2:])
    return Deffacts(name=name, facts=bodies)


def _build_action(form, bound: set[str], rule: str) -> Action:
    if not isinstance(form, tuple) or not form or not isinstance(form[0], Symbol):
        raise EngineParseError(f"rule {rule}: malformed action")
    op = str(form[0])
    if op in ("assert", "retract"):
        if len(form) != 2:
            raise EngineParseError(f"rule {rule}: {op} takes exactly one fact form")
        head, terms = _fact_body(form[1], allow_vars=True, context=f"rule {rule} {op}")
        for t in terms:
            if is_variable(t) and t not in bound:
                raise EngineParseError(f"rule {rule}: unbound variable {t} in {op}")
        return Action(kind=op, head=head, terms=terms)
    if op == "printout":
        if len(form) < 2 or form[1] != Symbol("t"):
            raise EngineParseError(f"rule {rule}: printout must target the t router")
        items = form[2:]
        for t in items:
            if isinstance(t, tuple):
                raise EngineParseError(f"rule {rule}: nested forms are not allowed in printout")
            if is_variable(t) and t not in bound:
                raise EngineParseError(f"rule {rule}: unbound variable {t} in printout")
        return Action(kind="printout", head=None, terms=tuple(items))
    raise EngineParseError(f"rule {rule}: unknown action ({op} ...)")


def _build_rule(form) -> Rule:
    name = _require_name(form, "defrule")
    body = list(form[2:])
    salience = 0
    if body and isinstance(body[0], tuple) and body[0][:1] == (Symbol("declare"),):
        decl = body.pop(0)
        ok = (len(decl) == 2 and isinstance(decl[1], tuple) and len(decl[1]) == 2
              and decl[1][0] == Symbol("salience") and isinstance(decl[1][1], int))
        if not ok:
            raise EngineParseError(f"rule {name}: declare accepts only (salience <int>)")
        salience = decl[1][1]
    try:
        arrow = body.index(Symbol("=>"))
    except ValueError:
        raise EngineParseError(f"rule {name}: missing =>") from None
    raw_patterns, raw_actions = body[:arrow], body[arrow + 1:]
    if not raw_patterns:
        raise EngineParseError(f"rule {name}: at least one pattern is required")
    patterns = []
    bound: set[str] = set()
    for p in raw_patterns:
        head, terms = _fact_body(p, allow_vars=True, context=f"rule {name} pattern")
        patterns.append(Pattern(head=head, terms=terms))
        bound.update(str(t) for t in terms if is_variable(t))
    actions = tuple(_build_action(a, bound, name) for a in raw_actions)
    return Rule(name=name, salience=salience, patterns=tuple(patterns), actions=actions)


def parse_program(text: str) -> list[Rule | Deffacts]:
    """Parse a whole program; raises ``EngineParseError`` with position info."""

    constructs = []
    for form in read_forms(text):
        if not form or not isinstance(form[0], Symbol):
            raise EngineParseError("top-level forms must start with deffacts or defrule")
        kw = str(form[0])
        if kw == "deffacts":
            constructs.append(_build_deffacts(form))
        elif kw == "defrule":
            constructs.append(_build_rule(form))
        else:
            raise EngineParseError(f"unknown construct ({kw} ...); expected deffacts or defrule")
    return constructs


def parse_fact_string(text: str) -> tuple[str, tuple[Atom, ...]]:
    """Parse exactly one ground fact like ``(score 12 "done")``."""

    forms = read_forms(text)
    if len(forms) != 1:
        raise EngineParseError("expected exactly one fact form")
    return _fact_body(forms[0], allow_vars=False, context="fact")


# --- rendering (canonical, re-parseable) ------------------------------------

def render_atom(value: Atom) -> str:
    if isinstance(value, Symbol):
        return str(value)
    if isinstance(value, str):
        return '"' + "".join(_UNESCAPES.get(c, c) for c in value) + '"'
    return str(value)


def render_fact(head: str, slots: tuple[Atom, ...]) -> str:
    inner = " ".join([head] + [render_atom(s) for s in slots])
    return f"({inner})"


def _render_action(a: Action) -> str:
    if a.kind == "printout":
        items = " ".join(["t"] + [render_atom(t) for t in a.terms])
        return f"(printout {items})"
    return f"({a.kind} {render_fact(a.head, a.terms)})"


def render_construct(c: Rule | Deffacts) -> str:
    if isinstance(c, Deffacts):
        bodies = "".join(" " + render_fact(h, s) for h, s in c.facts)
        return f"(deffacts {c.name}{bodies})"
    parts = [f"(defrule {c.name}"]
    if c.salience:
        parts.append(f" (declare (salience {c.salience}))")
    for p in c.patterns:
        parts.append(" " + render_fact(p.head, p.terms))
    parts.append(" =>")
    for a in c.actions:
        parts.append(" " + _render_action(a))
    return "".join(parts) + ")"
