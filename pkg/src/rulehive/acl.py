"""Agent communication language: typed messages and the line-oriented codec.

A message is an immutable value.  On the wire it is exactly one JSON object
per line, encoded with sorted keys, minimal separators and ASCII escapes, so
that encoding is canonical: equal messages produce identical bytes.  All
eight fields are always present (``null`` when unset):

    {"content": ..., "conv": "...", "in_reply_to": null, "ontology": "...",
     "perf": "REQUEST", "receivers": [{"address": null, "name": "b"}],
     "reply_with": "...", "sender": {"address": null, "name": "a"}}

``content`` is one of three shapes:

* a plain string (free text),
* an engine action ``{"code": ..., "params": [...], "origin": ...}``,
* a result ``{"status": "OK"|"ERROR", "output": ..., "elapsed_ms": ...}``.

The set of action codes is closed and ships as a versioned data file
(``data/engine_actions.json``); the codec validates codes and parameter
counts against that table and nothing else.  Decoding is strict: unknown
top-level keys, unknown symbols, or wrong arity reject the whole line —
a message is never half-valid.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

from .errors import ArityError, DecodeError, UnknownSymbolError

# Ontology names used by the built-in protocols.
ONTOLOGY_ENGINE = "rbe-actions"        # external requests for engine work
ONTOLOGY_ENGINE_JOB = "rbe-actions-exec"  # an agent's self-addressed job leg
ONTOLOGY_PRESENCE = "presence"         # liveness pings
ONTOLOGY_DIRECTORY = "directory"       # platform directory lookups

_WIRE_KEYS = frozenset(
    {"perf", "sender", "receivers", "conv", "reply_with", "in_reply_to",
     "ontology", "content"}
)
_ACTION_KEYS = frozenset({"code", "params", "origin"})
_RESULT_KEYS = frozenset({"status", "output", "elapsed_ms"})


def _load_action_table() -> dict[str, dict]:
    text = resources.files("rulehive.data").joinpath("engine_actions.json").read_text()
    return json.loads(text)["actions"]


_ACTION_TABLE = _load_action_table()

#: code -> exact number of string parameters
ACTION_ARITY: dict[str, int] = {code: entry["arity"] for code, entry in _ACTION_TABLE.items()}

#: codes that agents refuse on the message path (development consoles only)
DEV_ONLY_ACTIONS: frozenset[str] = frozenset(
    code for code, entry in _ACTION_TABLE.items() if entry.get("dev_only")
)


class Performative(str, Enum):
    REQUEST = "REQUEST"
    AGREE = "AGREE"
    REFUSE = "REFUSE"
    INFORM = "INFORM"
    FAILURE = "FAILURE"
    NOT_UNDERSTOOD = "NOT_UNDERSTOOD"


class Origin(str, Enum):
    """Who ultimately initiated an engine action."""

    AGENT = "AGENT"
    HUMAN = "HUMAN"


@dataclass(frozen=True, slots=True)
class AgentId:
    """Name plus optional platform locator (``host:port``); names are unique
    per platform, so a bare name addresses a local agent."""

    name: str
    address: str | None = None


@dataclass(frozen=True, slots=True)
class EngineAction:
    """One entry of the closed action vocabulary with its parameters."""

    code: str
    params: tuple[str, ...] = ()
    origin: Origin = Origin.AGENT


@dataclass(frozen=True, slots=True)
class ResultPayload:
    """Outcome of an executed engine action."""

    status: str                 # "OK" | "ERROR"
    output: str = ""            # printed output, or diagnostic when ERROR
    elapsed_ms: int = 0


Content = str | EngineAction | ResultPayload


@dataclass(frozen=True, slots=True)
class AclMessage:
    performative: Performative
    sender: AgentId
    receivers: tuple[AgentId, ...]
    conversation_id: str
    content: Content = ""
    ontology: str = ""
    reply_with: str | None = None
    in_reply_to: str | None = None


def new_conversation_id(prefix: str = "conv") -> str:
    return f"{prefix}-{uuid.uuid4().hex[:12]}"


def make_engine_action(
    code: str, params: tuple[str, ...] | list[str] = (), origin: Origin = Origin.AGENT
) -> EngineAction:
    """Build a validated action; unknown codes and wrong parameter counts
    are rejected here, before a message ever exists."""

    if not isinstance(code, str) or code not in ACTION_ARITY:
        raise UnknownSymbolError(f"unknown action code {code!r}")
    params = tuple(params)
    for p in params:
        if not isinstance(p, str):
            raise DecodeError(f"action parameter must be a string, got {type(p).__name__}")
    want = ACTION_ARITY[code]
    if len(params) != want:
        raise ArityError(f"{code} takes {want} parameter(s), got {len(params)}")
    if not isinstance(origin, Origin):
        raise UnknownSymbolError(f"unknown origin {origin!r}")
    return EngineAction(code=code, params=params, origin=origin)


def create_reply(
    msg: AclMessage,
    performative: Performative,
    sender: AgentId,
    content: Content = "",
    *,
    ontology: str | None = None,
    reply_with: str | None = None,
) -> AclMessage:
    """Reply to ``msg``: same conversation, addressed to its sender, and
    ``in_reply_to`` set from the original ``reply_with``."""

    return AclMessage(
        performative=performative,
        sender=sender,
        receivers=(msg.sender,),
        conversation_id=msg.conversation_id,
        content=content,
        ontology=msg.ontology if ontology is None else ontology,
        reply_with=reply_with,
        in_reply_to=msg.reply_with,
    )


# --- validation -----------------------------------------------------------

def _check_name(label: str, value: str) -> None:
    if not isinstance(value, str) or not value:
        raise DecodeError(f"{label} must be a non-empty string")


def _check_agent_id(label: str, aid: AgentId) -> None:
    if not isinstance(aid, AgentId):
        raise DecodeError(f"{label} must be an AgentId")
    _check_name(f"{label} name", aid.name)
    if aid.address is not None and (not isinstance(aid.address, str) or not aid.address):
        raise DecodeError(f"{label} address must be null or a non-empty string")


def validate_message(msg: AclMessage) -> None:
    """Raise if ``msg`` violates any structural invariant.  Used by both the
    encoder and the decoder so a message can never leave or enter a process
    half-valid."""

    if not isinstance(msg.performative, Performative):
        raise UnknownSymbolError(f"unknown performative {msg.performative!r}")
    _check_agent_id("sender", msg.sender)
    if not isinstance(msg.receivers, tuple) or not msg.receivers:
        raise DecodeError("receivers must be a non-empty tuple")
    for r in msg.receivers:
        _check_agent_id("receiver", r)
    _check_name("conversation_id", msg.conversation_id)
    for label, ref in (("reply_with", msg.reply_with), ("in_reply_to", msg.in_reply_to)):
        if ref is not None:
            _check_name(label, ref)
    if not isinstance(msg.ontology, str):
        raise DecodeError("ontology must be a string")
    c = msg.content
    if isinstance(c, str):
        pass
    elif isinstance(c, EngineAction):
        make_engine_action(c.code, c.params, c.origin)  # re-checks code/arity
    elif isinstance(c, ResultPayload):
        _validate_result(c)
    else:
        raise DecodeError(f"unsupported content type {type(c).__name__}")
    if (msg.performative is Performative.REQUEST and msg.ontology == ONTOLOGY_ENGINE
            and not isinstance(c, EngineAction)):
        raise DecodeError(f"a REQUEST on {ONTOLOGY_ENGINE} must carry an engine action")


def _validate_result(r: ResultPayload) -> None:
    if r.status not in ("OK", "ERROR"):
        raise UnknownSymbolError(f"unknown result status {r.status!r}")
    if not isinstance(r.output, str):
        raise DecodeError("result output must be a string")
    if r.status == "ERROR" and not r.output:
        raise DecodeError("ERROR result must carry a diagnostic in output")
    if not isinstance(r.elapsed_ms, int) or isinstance(r.elapsed_ms, bool) or r.elapsed_ms < 0:
        raise DecodeError("elapsed_ms must be a non-negative integer")


# --- codec ----------------------------------------------------------------

def _agent_to_doc(aid: AgentId) -> dict:
    return {"name": aid.name, "address": aid.address}


def _content_to_doc(c: Content):
    if isinstance(c, str):
        return c
    if isinstance(c, EngineAction):
        return {"code": c.code, "params": list(c.params), "origin": c.origin.value}
    return {"status": c.status, "output": c.output, "elapsed_ms": c.elapsed_ms}


def encode_message(msg: AclMessage) -> bytes:
    """Serialize to one canonical JSON line (trailing ``\\n`` included)."""

    validate_message(msg)
    doc = {
        "perf": msg.performative.value,
        "sender": _agent_to_doc(msg.sender),
        "receivers": [_agent_to_doc(r) for r in msg.receivers],
        "conv": msg.conversation_id,
        "reply_with": msg.reply_with,
        "in_reply_to": msg.in_reply_to,
        "ontology": msg.ontology,
        "content": _content_to_doc(msg.content),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode("ascii") + b"\n"


def _agent_from_doc(label: str, doc) -> AgentId:
    if not isinstance(doc, dict) or set(doc) != {"name", "address"}:
        raise DecodeError(f"{label} must be an object with name and address")
    aid = AgentId(name=doc["name"], address=doc["address"])
    _check_agent_id(label, aid)
    return aid


def _content_from_doc(doc) -> Content:
    if isinstance(doc, str):
        return doc
    if isinstance(doc, dict):
        keys = set(doc)
        if keys == _ACTION_KEYS:
            if not isinstance(doc["params"], list):
                raise DecodeError("action params must be a list")
            try:
                origin = Origin(doc["origin"])
            except ValueError:
                raise UnknownSymbolError(f"unknown origin {doc['origin']!r}") from None
            return make_engine_action(doc["code"], doc["params"], origin)
        if keys == _RESULT_KEYS:
            r = ResultPayload(status=doc["status"], output=doc["output"],
                              elapsed_ms=doc["elapsed_ms"])
            _validate_result(r)
            return r
        raise DecodeError(f"unrecognized content object with keys {sorted(keys)}")
    raise DecodeError(f"unsupported content type {type(doc).__name__}")


def decode_message(line: bytes | str) -> AclMessage:
    """Parse and fully validate one encoded line.

    Raises ``DecodeError`` for malformed structure, ``UnknownSymbolError``
    for symbols outside the closed vocabularies, and ``ArityError`` for a
    wrong action parameter count.
    """

    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"not valid UTF-8: {exc}") from None
    text = line.strip("\r\n")
    if "\n" in text or "\r" in text:
        raise DecodeError("a message is exactly one line")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"not valid JSON: {exc.msg} at column {exc.colno}") from None
    if not isinstance(doc, dict):
        raise DecodeError("top level must be a JSON object")
    if set(doc) != _WIRE_KEYS:
        missing = sorted(_WIRE_KEYS - set(doc))
        extra = sorted(set(doc) - _WIRE_KEYS)
        raise DecodeError(f"bad top-level keys (missing={missing}, extra={extra})")
    try:
        performative = Performative(doc["perf"])
    except ValueError:
        raise UnknownSymbolError(f"unknown performative {doc['perf']!r}") from None
    if not isinstance(doc["receivers"], list):
        raise DecodeError("receivers must be a list")
    msg = AclMessage(
        performative=performative,
        sender=_agent_from_doc("sender", doc["sender"]),
        receivers=tuple(_agent_from_doc("receiver", r) for r in doc["receivers"]),
        conversation_id=doc["conv"],
        content=_content_from_doc(doc["content"]),
        ontology=doc["ontology"],
        reply_with=doc["reply_with"],
        in_reply_to=doc["in_reply_to"],
    )
    validate_message(msg)
    return msg
