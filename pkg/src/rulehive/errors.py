"""Exception hierarchy shared across the package.

Every error carries a stable symbolic ``code`` so that failures can be
reported over the wire (in FAILURE message content, gateway error frames,
CLI exit diagnostics) without string-matching on human prose.
"""

from __future__ import annotations


class RulehiveError(Exception):
    """Base class; ``code`` is a stable machine-readable identifier."""

    code = "ERROR"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)

    def __str__(self) -> str:  # "CODE: detail" reads well in logs and payloads
        detail = super().__str__()
        if detail and detail != self.code:
            return f"{self.code}: {detail}"
        return self.code

    @property
    def detail(self) -> str:
        """The human part of the message, without the code prefix."""

        text = Exception.__str__(self)
        return "" if text == self.code else text


# --- wire / messaging ---------------------------------------------------

class DecodeError(RulehiveError):
    code = "DECODE_ERROR"


class UnknownSymbolError(RulehiveError):
    """An enumerated wire symbol (performative, action code, origin) is not
    part of the closed vocabulary."""

    code = "UNKNOWN_SYMBOL"


class ArityError(RulehiveError):
    code = "ARITY_ERROR"


# --- platform / runtime ---------------------------------------------------

class DuplicateAgentError(RulehiveError):
    code = "DUPLICATE_AGENT"


class UnknownAgentError(RulehiveError):
    code = "UNKNOWN_AGENT"


class InvalidRunlevelError(RulehiveError):
    code = "INVALID_RUNLEVEL"


class ScriptError(RulehiveError):
    """A behavior script failed to parse or validate; the agent keeps its
    previous behavior set when this is raised."""

    code = "SCRIPT_ERROR"


class EngineBusyError(RulehiveError):
    code = "ENGINE_BUSY"


class SyncLocalOnlyError(RulehiveError):
    code = "SYNC_LOCAL_ONLY"


class PathError(RulehiveError):
    """File access outside an agent's working directory, or a disallowed
    file extension."""

    code = "PATH_ERROR"


class ConfigError(RulehiveError):
    code = "CONFIG_ERROR"


class ComparisonError(RulehiveError):
    code = "COMPARISON_ERROR"


# --- rule engine ---------------------------------------------------------

class EngineError(RulehiveError):
    """Base for errors raised by the embedded rule engine."""

    code = "ENGINE_ERROR"


class EngineParseError(EngineError):
    code = "PARSE_ERROR"


class DuplicateConstructError(EngineError):
    code = "DUPLICATE_CONSTRUCT"


class UnknownCommandError(EngineError):
    code = "UNKNOWN_COMMAND"


class EvalError(EngineError):
    code = "EVAL_ERROR"


class CycleCapExceededError(EngineError):
    code = "CYCLE_CAP_EXCEEDED"

    def __init__(self, message: str = "", fired: int = 0):
        super().__init__(message)
        self.fired = fired


class SnapshotError(EngineError):
    code = "SNAPSHOT_ERROR"


class NoSuchFactError(EngineError):
    code = "NO_SUCH_FACT"


class NoSuchSlotError(EngineError):
    code = "NO_SUCH_SLOT"


class NoSolutionError(EngineError):
    code = "NO_SOLUTION"
