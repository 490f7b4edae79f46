"""The acceptance gate: one test per core guarantee of the package.

Each test prints exactly one [PASS]/[FAIL] line carrying the decisive
measurement (run with -s, or read captured output on failure), then
asserts the same condition so the suite result matches the printout.
"""

import json
import random
import threading
import time
from pathlib import Path

import pytest

from rulehive.acl import (
    ACTION_ARITY,
    AclMessage,
    ONTOLOGY_ENGINE_JOB,
    Performative,
    decode_message,
    encode_message,
    make_engine_action,
)
from rulehive.benchmark import (
    WORKLOAD_INDICES,
    build_idle_schedule,
    compare,
    run_experiment,
)
from rulehive.engine import Engine
from rulehive.engine.sudoku import solve
from rulehive.errors import NoSolutionError
from rulehive.ruleagent import dispatch_action, make_rule_agent
from rulehive.runlevels import request_runlevel, write_default_scripts
from rulehive.runtime import Platform

from support_codec import random_message
from test_engine_oracle import (
    _build_pair,
    _engine_fact_values,
    test_refraction_quiescence_is_stable,
    test_reset_is_idempotent,
    test_snapshot_round_trip_preserves_run_state,
)
from test_ruleagent import collect, engine_request
from test_runlevels import behaviors_by_name

GOLDEN_DIR = Path(__file__).parent / "golden"
DURATIONS_MS = (250, 800, 1600, 2500)


def verdict(label: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {label}"
    if detail:
        line += f"  ({detail})"
    print(line, flush=True)


def test_1_nonblocking_agent_keeps_answering_under_load():
    idle = run_experiment("nonblocking", schedule=build_idle_schedule())
    loaded = run_experiment("nonblocking", DURATIONS_MS)

    idle_median = idle.median_ping_delay_ms()
    budget = 5.0 * idle_median
    max_ping = loaded.max_ping_delay_ms()
    under_100 = all(d < 100.0 for d in loaded.ping_delays())

    ok = (idle.complete and loaded.complete
          and max_ping <= budget and under_100)
    verdict("pings under load stay within 5x the idle median and < 100 ms",
            ok, f"idle median {idle_median:.2f} ms, budget {budget:.2f} ms, "
                f"loaded max {max_ping:.2f} ms")
    assert idle.complete and loaded.complete
    assert max_ping <= budget
    assert under_100


def test_2_blocking_agent_stalls_and_finishes_late():
    assert sum(DURATIONS_MS) == 5150
    nonblocking = run_experiment("nonblocking", DURATIONS_MS)
    blocking = run_experiment("blocking", DURATIONS_MS)
    result = compare(nonblocking, blocking)

    by_index = dict(zip(WORKLOAD_INDICES, DURATIONS_MS))
    stalls_blocking = result.stall_after_workload(result.blocking, by_index)
    stalls_nonblocking = result.stall_after_workload(result.nonblocking,
                                                     by_index)
    signature_ok = (all(stalls_blocking.values())
                    and not any(stalls_nonblocking.values()))
    gap_ok = result.gap_ms >= 1500.0

    verdict("blocking run stalls after each workload and ends >= 1500 ms "
            "after the nonblocking run",
            signature_ok and gap_ok,
            f"gap {result.gap_ms:.1f} ms, blocking stalls "
            f"{sorted(i for i, s in stalls_blocking.items() if s)}, "
            f"nonblocking stalls "
            f"{sorted(i for i, s in stalls_nonblocking.items() if s)}")
    assert nonblocking.complete and blocking.complete
    assert signature_ok
    assert gap_ok


def test_3_twofold_protocol_across_1000_interleaved_requests():
    platform = Platform()
    server = make_rule_agent(platform, "server")
    clients = [platform.register_agent(f"client-{i}") for i in range(4)]

    job_legs = []
    server.add_trace_hook(
        lambda e: job_legs.append(e.detail)
        if e.kind == "send" and e.detail.get("ontology") == ONTOLOGY_ENGINE_JOB
        else None)

    # Count engine holders through the lock API itself: the in-use flag
    # must go 0 -> 1 -> 0, never 2, no matter how requests interleave.
    guard = threading.Lock()
    holders = 0
    violations = []
    real_acquire = server.engine.acquire
    real_try = server.engine.try_acquire
    real_release = server.engine.release

    def note(delta):
        nonlocal holders
        with guard:
            holders += delta
            if holders not in (0, 1):
                violations.append(holders)

    def acquire():
        real_acquire()
        note(+1)

    def try_acquire():
        got = real_try()
        if got:
            note(+1)
        return got

    def release():
        note(-1)
        real_release()

    server.engine.acquire = acquire
    server.engine.try_acquire = try_acquire
    server.engine.release = release

    rng = random.Random(2026)
    total = 1000
    menu = [
        lambda i: ("EVAL_COMMAND", (f"(assert (n {i}))",)),
        lambda i: ("MAKE_ASSERT_STRING", (f"(m {i})",)),
        lambda i: ("RUN_NUMBER_OF_CYCLES", ("1",)),
        lambda i: ("SET_INPUT_BUFFER_COUNT", ()),
        lambda i: ("APPEND_INPUT_BUFFER", (f"x{i}",)),
    ]
    platform.start()
    try:
        for i in range(total):
            client = clients[i % len(clients)]
            code, params = rng.choice(menu)(i)
            client.send(engine_request(client, server, code=code,
                                       params=params, conv=f"tw-{i}"))

        by_conv: dict[str, list[AclMessage]] = {}
        done = 0
        deadline = time.monotonic() + 60.0
        while time.monotonic() < deadline:
            drained = 0
            for client in clients:
                while (msg := client.queue.take()) is not None:
                    drained += 1
                    by_conv.setdefault(msg.conversation_id, []).append(msg)
                    if msg.performative in (Performative.INFORM,
                                            Performative.FAILURE):
                        done += 1
            if done >= total:
                break
            if not drained:
                time.sleep(0.002)
    finally:
        platform.stop()

    shape_bad = []
    for i in range(total):
        conv = f"tw-{i}"
        msgs = by_conv.get(conv, [])
        performatives = [m.performative for m in msgs]
        terminal = [m for m in msgs if m.performative in
                    (Performative.INFORM, Performative.FAILURE)]
        if (len(msgs) != 2
                or performatives[0] is not Performative.AGREE
                or len(terminal) != 1
                or terminal[0].in_reply_to != f"rw-{conv}"):
            shape_bad.append(conv)
    legs_by_conv = {}
    for leg in job_legs:
        legs_by_conv[leg["conv"]] = legs_by_conv.get(leg["conv"], 0) + 1
    legs_bad = [c for c in (f"tw-{i}" for i in range(total))
                if legs_by_conv.get(c, 0) != 1]

    ok = not shape_bad and not legs_bad and not violations
    verdict("1000 interleaved requests each got one AGREE, one self-addressed "
            "job REQUEST, and one terminal reply, with single engine "
            "ownership throughout",
            ok, f"{len(by_conv)} conversations answered, "
                f"{len(shape_bad)} bad shapes, {len(legs_bad)} bad job legs, "
                f"{len(violations)} double-holds")
    assert shape_bad == []
    assert legs_bad == []
    assert violations == []


def test_4_every_action_code_has_a_working_behavior(tmp_path):
    golden = json.loads((GOLDEN_DIR / "actions_golden.json").read_text())
    covered = {step["code"] for step in golden["steps"]}
    coverage_ok = covered == set(ACTION_ARITY) and len(ACTION_ARITY) == 23

    for name, text in golden["files"].items():
        (tmp_path / name).write_text(text)
    engine = Engine()
    mismatched = []
    for i, step in enumerate(golden["steps"]):
        result = dispatch_action(
            engine, make_engine_action(step["code"], tuple(step["params"])),
            workdir=tmp_path)
        if (result.status, result.output) != (step["status"], step["output"]):
            mismatched.append(f"step {i} ({step['code']})")

    # the two buffer codes really edit the engine's input buffer
    buffered = Engine()
    dispatch_action(buffered, make_engine_action(
        "APPEND_INPUT_BUFFER", ("hello",)), workdir=tmp_path)
    count = dispatch_action(buffered, make_engine_action(
        "SET_INPUT_BUFFER_COUNT"), workdir=tmp_path)
    buffer_ok = buffered.input_buffer == "hello" and count.output == "5"

    # the inner shell never runs for a remote peer
    platform = Platform()
    server = make_rule_agent(platform, "server")
    client = platform.register_agent("client")
    platform.start()
    try:
        client.send(engine_request(client, server, code="RUN_INNER_SHELL",
                                   params=(), conv="c-shell"))
        replies = collect(client, "c-shell", 1)
    finally:
        platform.stop()
    refusal_ok = (len(replies) == 1
                  and replies[0].performative is Performative.REFUSE
                  and "DEV_ONLY" in str(replies[0].content))

    ok = coverage_ok and not mismatched and buffer_ok and refusal_ok
    verdict("all 23 action codes behave per the golden script, the buffer "
            "codes edit input_buffer, and RUN_INNER_SHELL is refused "
            "remotely as DEV_ONLY",
            ok, f"{len(covered)} codes covered, "
                f"{len(mismatched)} golden mismatches")
    assert coverage_ok
    assert mismatched == []
    assert buffer_ok
    assert refusal_ok


def test_5_engine_agrees_with_the_naive_oracle_on_500_programs():
    started = time.monotonic()
    mismatched = []
    for seed in range(500):
        engine, oracle, limit = _build_pair(seed)
        fired_engine = engine.run(limit)
        fired_oracle = oracle.run(limit)
        if (fired_engine != fired_oracle
                or _engine_fact_values(engine) != oracle.fact_values()
                or engine.next_fact_index != oracle.next_index
                or engine.take_output() != "\n".join(oracle.output)):
            mismatched.append(seed)
    for seed in range(0, 500, 25):
        test_refraction_quiescence_is_stable(seed)
        test_reset_is_idempotent(seed)
        test_snapshot_round_trip_preserves_run_state(seed)
    elapsed = time.monotonic() - started

    ok = not mismatched and elapsed < 30.0
    verdict("500 randomized programs match the naive re-matching oracle, "
            "with refraction, reset, and snapshot properties holding",
            ok, f"{len(mismatched)} mismatches, {elapsed:.1f} s")
    assert mismatched == []
    assert elapsed < 30.0


def test_6_runlevel_ladder_activates_exactly_whats_declared(tmp_path):
    platform = Platform(workdir=tmp_path)
    agent = make_rule_agent(platform, "Agent200", standard_behaviors=False)
    write_default_scripts(agent.workdir)
    platform.start()
    try:
        r1 = request_runlevel(agent, 1)
        r3 = request_runlevel(agent, 3)
        r5 = request_runlevel(agent, 5)
        ladder_ok = (
            r1["loaded"] == ["presence", "engine-requests"]
            and r1["activated"] == []
            and r3["loaded"] == ["engine-jobs"]
            and sorted(r3["activated"]) == ["engine-requests", "presence"]
            and r5["loaded"] == []
            and r5["activated"] == ["engine-jobs"]
            and agent.in_service)

        r6 = request_runlevel(agent, 6)
        reboot_ok = (r6["runlevel"] == 0
                     and r6["removed"] == ["presence", "engine-requests",
                                           "engine-jobs"]
                     and agent.behaviors == []
                     and platform.agent("Agent200") is agent)

        extra = ('\n(behavior extra-probe (kind cyclic)\n'
                 '  (on (performative REQUEST) (ontology "probe"))\n'
                 '  (do (reply-with-text "probed")))\n')
        path = agent.workdir / "level.01.rbs"
        path.write_text(path.read_text() + extra)
        r5_again = request_runlevel(agent, 5)
        edit_ok = ("extra-probe" in r5_again["loaded"]
                   and behaviors_by_name(agent)["extra-probe"].active)
    finally:
        platform.stop()

    ok = ladder_ok and reboot_ok and edit_ok
    verdict("runlevels 0->1->3->5 load then activate the declared behaviors, "
            "6 reboots to an empty registered agent, and script edits are "
            "picked up on the next climb",
            ok, f"reboot removed {r6['removed']}, "
                f"re-climb loaded {r5_again['loaded']}")
    assert ladder_ok
    assert reboot_ok
    assert edit_ok


def test_7_shipped_puzzles_solve_to_their_frozen_answers():
    golden = json.loads((GOLDEN_DIR / "sudoku_solutions.json").read_text())
    from importlib import resources

    wrong = []
    for name in sorted(golden):
        shipped = (resources.files("rulehive.data").joinpath("puzzles")
                   .joinpath(f"{name}.txt").read_text())
        solution = solve(shipped)
        if solution != golden[name]["solution"]:
            wrong.append(name)
        if solve(solution) != solution:    # a full grid is a fixed point
            wrong.append(f"{name}-fixed-point")

    contradiction = "11" + "." * 79
    with pytest.raises(NoSolutionError) as err:
        solve(contradiction)
    rejects_ok = str(err.value).startswith("NO_SOLUTION")

    ok = not wrong and rejects_ok
    verdict("the four shipped puzzles solve to their frozen answers, "
            "solved grids are fixed points, and contradictions raise "
            "NO_SOLUTION",
            ok, f"{len(golden)} puzzles, {len(wrong)} deviations")
    assert wrong == []
    assert rejects_ok


def test_8_wire_codec_round_trips_ten_thousand_messages():
    rng = random.Random(0xC0DEC)
    broken = 0
    for _ in range(10_000):
        msg = random_message(rng)
        wire = encode_message(msg)
        again = decode_message(wire)
        if again != msg or encode_message(again) != wire:
            broken += 1

    from test_acl import golden_messages
    frozen = (GOLDEN_DIR / "wire_golden.jsonl").read_bytes().splitlines(
        keepends=True)
    messages = golden_messages()
    stable = (len(frozen) == len(messages)
              and all(encode_message(m) == line and encode_message(m) == line
                      for m, line in zip(messages, frozen)))

    ok = broken == 0 and stable
    verdict("10000 random messages survive encode/decode bit-exactly and "
            "the frozen wire bytes reproduce",
            ok, f"{broken} broken round-trips, "
                f"{len(messages)} golden lines stable")
    assert broken == 0
    assert stable
