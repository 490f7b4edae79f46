"""The per-agent gateway: operations, errors, and the WebSocket framing."""

import time
import warnings

import pytest

with warnings.catch_warnings():
    warnings.simplefilter("ignore", DeprecationWarning)
    from fastapi.testclient import TestClient

from rulehive.errors import (
    ConfigError,
    EngineBusyError,
    PathError,
    SyncLocalOnlyError,
    UnknownAgentError,
)
from rulehive.gateway import (
    EDITABLE_SUFFIXES,
    GATEWAY_KINDS,
    RUNLEVEL_BUTTONS,
    Gateway,
)
from rulehive.ruleagent import make_rule_agent
from rulehive.runlevels import write_default_scripts
from rulehive.runtime import DIRECTORY_AGENT_NAME, Platform
from rulehive.service import create_app


@pytest.fixture
def rig(tmp_path):
    platform = Platform(workdir=tmp_path)
    alpha = make_rule_agent(platform, "Agent200")
    beta = make_rule_agent(platform, "Agent300")
    write_default_scripts(alpha.workdir)
    platform.start()
    gateway = Gateway(platform, alpha)
    yield platform, gateway, alpha, beta
    gateway.close()
    platform.stop()


class TestGatewayOperations:
    def test_list_agents(self, rig):
        _, gateway, *_ = rig
        listing = gateway.list_agents()
        assert listing["attached"] == "Agent200"
        assert listing["agents"] == [
            "Agent200", "Agent300", DIRECTORY_AGENT_NAME]

    def test_target_spellings_for_self(self, rig):
        _, gateway, *_ = rig
        for spelling in (None, "", "itself"):
            assert gateway.resolve_target(spelling) == "Agent200"
        assert gateway.resolve_target("Agent300") == "Agent300"

    def test_exec_sync_runs_on_the_attached_engine(self, rig):
        _, gateway, alpha, _ = rig
        out = gateway.exec_sync("(assert (direct 1))", "itself")
        assert out == {"output": "f-0"}
        assert alpha.engine.next_fact_index == 1

    def test_exec_sync_refuses_other_agents(self, rig):
        _, gateway, *_ = rig
        with pytest.raises(SyncLocalOnlyError, match="Agent300"):
            gateway.exec_sync("(facts)", "Agent300")

    def test_exec_sync_while_engine_held(self, rig):
        _, gateway, alpha, _ = rig
        alpha.engine.acquire()   # what a detached job does while running
        try:
            with pytest.raises(EngineBusyError):
                gateway.exec_sync("(facts)", None)
        finally:
            alpha.engine.release()
        assert gateway.exec_sync("(facts)", None) == {"output": ""}

    def test_runlevel_buttons(self, rig):
        _, gateway, alpha, _ = rig
        assert RUNLEVEL_BUTTONS == {"n-1": 1, "n-3": 3, "n-5": 5, "n-6!": 6}
        report = gateway.set_runlevel("n-5")
        assert report["runlevel"] == 5
        assert report["in_service"] is True
        assert alpha.runlevel == 5

        report = gateway.set_runlevel("n-6!")
        assert report["runlevel"] == 0
        assert report["in_service"] is False

    def test_runlevel_accepts_bare_numbers(self, rig):
        _, gateway, *_ = rig
        assert gateway.set_runlevel(3)["runlevel"] == 3

    def test_runlevel_rejects_unknown_buttons_and_remote_targets(self, rig):
        _, gateway, *_ = rig
        with pytest.raises(ConfigError, match="n-9"):
            gateway.set_runlevel("n-9")
        with pytest.raises(UnknownAgentError):
            gateway.set_runlevel(5, "nowhere-agent")

    def test_file_listing_and_round_trip(self, rig):
        _, gateway, *_ = rig
        listing = gateway.get_file(None)["files"]
        assert listing == ["level.00.rbs", "level.01.rbs",
                           "level.03.rbs", "level.05.rbs"]

        text = "; édité\n(behavior probe (kind fsm))\n\ttrailing\n"
        gateway.put_file("custom.rbs", text)
        assert gateway.get_file("custom.rbs")["text"] == text
        assert "custom.rbs" in gateway.get_file(None)["files"]

    def test_rule_files_are_editable_too(self, rig):
        _, gateway, *_ = rig
        assert ".clp-mini" in EDITABLE_SUFFIXES
        gateway.put_file("seed.clp-mini", "(deffacts d (a 1))\n")
        assert gateway.get_file("seed.clp-mini")["text"].startswith("(deffacts")

    def test_file_errors(self, rig):
        _, gateway, *_ = rig
        with pytest.raises(PathError, match="no such file"):
            gateway.get_file("ghost.rbs")
        with pytest.raises(PathError, match="expected one of"):
            gateway.get_file("notes.md")
        with pytest.raises(PathError, match="outside"):
            gateway.put_file("../escape.rbs", "x")
        with pytest.raises(ConfigError, match="body.text"):
            gateway.put_file("a.rbs", None)

    def test_unknown_kind(self, rig):
        _, gateway, *_ = rig
        with pytest.raises(ConfigError, match="unknown request kind"):
            gateway.handle_request("DANCE", None, {}, None)

    def test_exec_async_needs_an_event_channel(self, rig):
        _, gateway, *_ = rig
        with pytest.raises(ConfigError, match="event channel"):
            gateway.handle_request("EXEC_ASYNC", None, {"command": "(facts)"})
        with pytest.raises(ConfigError, match="non-empty command"):
            gateway.exec_async("   ", None, lambda e: None)

    def test_describe(self, rig):
        _, gateway, *_ = rig
        d = gateway.describe()
        assert d["agent"] == "Agent200"
        assert d["runlevel"] is None and d["in_service"] is False

    def test_exec_still_streams_after_a_reboot(self, rig):
        # A reboot tears down application behaviors only; the gateway's
        # relay is platform wiring and must keep routing replies afterwards.
        _, gateway, *_ = rig
        gateway.set_runlevel("n-5")
        gateway.set_runlevel("n-6!")
        gateway.set_runlevel("n-5")
        events = []
        gateway.exec_async("(assert (reborn 1))", "itself", events.append)
        deadline = time.monotonic() + 10.0
        while time.monotonic() < deadline:
            if any(e["terminal"] for e in events):
                break
            time.sleep(0.005)
        assert [e["performative"] for e in events] == ["AGREE", "INFORM"]
        assert events[1]["content"]["status"] == "OK"

    def test_close_removes_the_relay(self, rig):
        platform, _, alpha, _ = rig
        extra = Gateway(platform, alpha)
        with_relay = len(alpha.behaviors)
        extra.close()
        assert len(alpha.behaviors) == with_relay - 1

    def test_exec_async_events_arrive(self, rig):
        _, gateway, *_ = rig
        events = []
        out = gateway.exec_async("(assert (async 1))", "itself", events.append)
        conv = out["conversation_id"]
        deadline = time.monotonic() + 10.0
        while time.monotonic() < deadline:
            if any(e["terminal"] for e in events):
                break
            time.sleep(0.005)
        assert [e["performative"] for e in events] == ["AGREE", "INFORM"]
        assert all(e["conversation_id"] == conv for e in events)
        assert events[1]["content"]["status"] == "OK"
        assert events[1]["content"]["output"] == "f-0"


class TestTraceSubscription:
    def test_events_flow_and_close_stops_them(self, rig):
        _, gateway, alpha, _ = rig
        sub = gateway.subscribe_trace()
        gateway.exec_sync("(assert (traced 1))", None)
        alpha.trace("send", {"probe": True})
        events = sub.drain()
        assert any(e["kind"] == "send" for e in events)
        sub.close()
        alpha.trace("send", {"probe": True})
        assert sub.drain() == []

    def test_overflow_reports_a_dropped_marker(self, rig):
        _, gateway, alpha, _ = rig
        sub = gateway.subscribe_trace(limit=5)
        for i in range(12):
            alpha.trace("send", {"n": i})
        events = sub.drain()
        assert events[0] == {"kind": "trace-dropped", "count": 7}
        assert len(events) == 6   # marker + the 5 newest
        assert events[-1]["detail"] == {"n": 11}
        sub.close()

    def test_notify_fires_on_new_events(self, rig):
        _, gateway, alpha, _ = rig
        pokes = []
        sub = gateway.subscribe_trace(notify=lambda: pokes.append(1))
        alpha.trace("send", {})
        assert pokes
        sub.close()


def request(ws, kind, target=None, body=None, req_id=1):
    ws.send_json({"id": req_id, "kind": kind, "target": target,
                  "body": body or {}})


def frames_until(ws, done, limit=400):
    """Read frames until ``done(frames)`` or the safety limit."""

    frames = []
    for _ in range(limit):
        frames.append(ws.receive_json())
        if done(frames):
            return frames
    raise AssertionError(f"gave up after {limit} frames: {frames[-5:]}")


def response_with_id(frames, req_id):
    return next(f for f in frames if f.get("id") == req_id)


def done_exec(req_id, terminals=1):
    """Stop once the response envelope AND the terminal event(s) arrived.

    The service is free to push exec events before the response frame,
    so waiting for either one alone can cut the stream short.
    """

    def check(frames):
        have_response = any(f.get("id") == req_id for f in frames)
        have_terminals = sum(
            1 for f in frames
            if f.get("event") == "exec" and f["body"]["terminal"])
        return have_response and have_terminals >= terminals

    return check


class TestWebSocketService:
    @pytest.fixture
    def ws_client(self, rig):
        _, gateway, *_ = rig
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DeprecationWarning)
            client = TestClient(create_app(gateway))
            yield client

    def test_health(self, ws_client):
        body = ws_client.get("/health").json()
        assert body == {"agent": "Agent200", "runlevel": None,
                        "in_service": False, "platform": None}

    def test_kind_vocabulary_is_closed(self):
        assert set(GATEWAY_KINDS) == {
            "LIST_AGENTS", "EXEC_ASYNC", "EXEC_SYNC", "SET_RUNLEVEL",
            "GET_FILE", "PUT_FILE", "SUBSCRIBE_TRACE"}

    def test_list_agents_envelope(self, ws_client):
        with ws_client.websocket_connect("/gateway") as ws:
            request(ws, "LIST_AGENTS", req_id="a1")
            frame = ws.receive_json()
            assert frame["id"] == "a1" and frame["ok"] is True
            assert frame["body"]["attached"] == "Agent200"

    def test_exec_async_streams_to_terminal(self, ws_client):
        with ws_client.websocket_connect("/gateway") as ws:
            request(ws, "EXEC_ASYNC", "itself",
                    {"command": "(assert (ws 1))"}, req_id=7)
            frames = frames_until(ws, done_exec(7))
            response = response_with_id(frames, 7)
            conv = response["body"]["conversation_id"]
            updates = [f["body"] for f in frames if f.get("event") == "exec"
                       and f["body"]["conversation_id"] == conv]
            assert [u["performative"] for u in updates] == ["AGREE", "INFORM"]
            assert updates[-1]["content"]["output"] == "f-0"

    def test_exec_async_reaches_other_agents(self, rig, ws_client):
        _, _, _, beta = rig
        with ws_client.websocket_connect("/gateway") as ws:
            request(ws, "EXEC_ASYNC", "Agent300",
                    {"command": "(assert (cross 9))"}, req_id=8)
            frames = frames_until(ws, done_exec(8))
            terminal = [f["body"] for f in frames if f.get("event") == "exec"
                        and f["body"]["terminal"]][0]
            assert terminal["sender"] == "Agent300"
            assert terminal["content"]["output"] == "f-0"
        assert beta.engine.next_fact_index == 1

    def test_concurrent_execs_both_complete(self, ws_client):
        with ws_client.websocket_connect("/gateway") as ws:
            request(ws, "EXEC_ASYNC", "itself",
                    {"command": "(assert (one 1))"}, req_id="j1")
            request(ws, "EXEC_ASYNC", "Agent300",
                    {"command": "(assert (two 2))"}, req_id="j2")

            def two_terminals(fs):
                return (done_exec("j1", terminals=2)(fs)
                        and any(f.get("id") == "j2" for f in fs))

            frames = frames_until(ws, two_terminals)
            conv1 = response_with_id(frames, "j1")["body"]["conversation_id"]
            conv2 = response_with_id(frames, "j2")["body"]["conversation_id"]
            assert conv1 != conv2
            by_conv = {f["body"]["conversation_id"]: f["body"]
                       for f in frames if f.get("event") == "exec"
                       and f["body"]["terminal"]}
            assert by_conv[conv1]["content"]["output"] == "f-0"
            assert by_conv[conv2]["content"]["output"] == "f-0"

    def test_exec_sync_envelope_and_errors(self, ws_client):
        with ws_client.websocket_connect("/gateway") as ws:
            request(ws, "EXEC_SYNC", None, {"command": "(assert (s 1))"},
                    req_id=1)
            assert ws.receive_json()["body"] == {"output": "f-0"}

            request(ws, "EXEC_SYNC", "Agent300", {"command": "(facts)"},
                    req_id=2)
            frame = ws.receive_json()
            assert frame["ok"] is False
            assert frame["body"]["error"] == "SYNC_LOCAL_ONLY"

    def test_engine_busy_while_a_job_runs(self, rig, ws_client):
        _, _, alpha, _ = rig
        with ws_client.websocket_connect("/gateway") as ws:
            request(ws, "EXEC_ASYNC", "itself",
                    {"command": "(burn 500)"}, req_id="job")
            # wait until the detached worker actually holds the engine
            deadline = time.monotonic() + 5.0
            while time.monotonic() < deadline and alpha.engine.try_acquire():
                alpha.engine.release()
                time.sleep(0.01)

            request(ws, "EXEC_SYNC", None, {"command": "(facts)"},
                    req_id="probe")
            frames = frames_until(
                ws, lambda fs: any(f.get("id") == "probe" for f in fs))
            probe = response_with_id(frames, "probe")
            assert probe["ok"] is False
            assert probe["body"]["error"] == "ENGINE_BUSY"

            # and the job still finishes cleanly afterwards
            frames = frames_until(ws, lambda fs: any(
                f.get("event") == "exec" and f["body"]["terminal"]
                for f in fs))
            terminal = [f["body"] for f in frames if f.get("event") == "exec"
                        and f["body"]["terminal"]][-1]
            assert terminal["content"]["status"] == "OK"

    def test_set_runlevel_envelope(self, ws_client):
        with ws_client.websocket_connect("/gateway") as ws:
            request(ws, "SET_RUNLEVEL", "itself", {"level": "n-5"}, req_id=3)
            frame = ws.receive_json()
            assert frame["ok"] is True
            assert frame["body"]["runlevel"] == 5
            assert frame["body"]["in_service"] is True

    def test_file_round_trip_identical_bytes(self, ws_client):
        text = "; unicode — π ≈ 3.14159\n(behavior x (kind fsm))\r\n\ttab\n"
        with ws_client.websocket_connect("/gateway") as ws:
            request(ws, "PUT_FILE", None,
                    {"name": "edit.rbs", "text": text}, req_id=10)
            put = ws.receive_json()
            assert put["ok"] is True
            assert put["body"]["bytes"] == len(text.encode("utf-8"))

            request(ws, "GET_FILE", None, {"name": "edit.rbs"}, req_id=11)
            got = ws.receive_json()
            assert got["body"]["text"] == text

    def test_get_file_error_envelope(self, ws_client):
        with ws_client.websocket_connect("/gateway") as ws:
            request(ws, "GET_FILE", None, {"name": "ghost.rbs"}, req_id=12)
            frame = ws.receive_json()
            assert frame["ok"] is False
            assert frame["body"]["error"] == "PATH_ERROR"
            assert "ghost.rbs" in frame["body"]["detail"]

    def test_trace_subscription_streams(self, ws_client):
        with ws_client.websocket_connect("/gateway") as ws:
            request(ws, "SUBSCRIBE_TRACE", req_id="sub")
            ack = ws.receive_json()
            assert ack["body"] == {"subscribed": "Agent200"}

            # an async exec sends real messages, which the trace hook sees
            request(ws, "EXEC_ASYNC", "itself",
                    {"command": "(assert (t 1))"}, req_id="go")
            frames = frames_until(ws, lambda fs: any(
                f.get("event") == "trace" for f in fs))
            traces = [f["body"] for f in frames if f.get("event") == "trace"]
            assert traces and all("kind" in t for t in traces)

    def test_malformed_envelope(self, ws_client):
        with ws_client.websocket_connect("/gateway") as ws:
            ws.send_json({"id": 99, "target": "x"})   # no kind
            frame = ws.receive_json()
            assert frame == {"id": 99, "ok": False,
                             "body": {"error": "DECODE_ERROR",
                                      "detail": "expected {id, kind, target, body}"}}

    def test_unknown_kind_envelope(self, ws_client):
        with ws_client.websocket_connect("/gateway") as ws:
            request(ws, "TELEPORT", req_id=100)
            frame = ws.receive_json()
            assert frame["ok"] is False
            assert frame["body"]["error"] == "CONFIG_ERROR"
