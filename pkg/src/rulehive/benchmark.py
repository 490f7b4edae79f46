"""Latency experiment: does engine work stall an agent's message loop?

One analyzer agent fires a fixed 40-message schedule at a target agent —
a presence ping every 250 ms, except that entries 5, 15, 25 and 35 are
engine workloads of increasing cost.  Two target variants exist:

* ``nonblocking`` — the standard serving stack: work is detached, pings
  keep flowing while the engine grinds;
* ``blocking`` — a deliberately naive agent that executes the engine action
  inline inside its message-handling behavior, so everything behind it in
  the queue waits.

Every timestamp is taken from the analyzer's monotonic clock: a message's
delay is terminal-response arrival minus send time, so the two variants are
measured identically.  Reports can be written to CSV and compared.
"""

from __future__ import annotations

import csv
import gc
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .acl import (
    AclMessage,
    AgentId,
    ONTOLOGY_ENGINE,
    ONTOLOGY_PRESENCE,
    Performative,
    make_engine_action,
)
from .engine import Engine
from .errors import ComparisonError, ConfigError
from .ruleagent import dispatch_action, make_rule_agent, PresenceResponder
from .runtime import Agent, Behavior, BehaviorKind, Platform, ReceiveTemplate

VARIANTS = ("nonblocking", "blocking")

MESSAGE_COUNT = 40
SPACING_MS = 250
WORKLOAD_INDICES = (5, 15, 25, 35)
DEFAULT_DURATIONS_MS = (250, 800, 1600, 2500)

CSV_HEADER = ["index", "kind", "variant", "sent_at_ms", "responded_at_ms", "delay_ms"]


@dataclass(frozen=True, slots=True)
class ScheduleEntry:
    index: int              # 1-based position
    kind: str               # "p" ping | "S" workload
    offset_ms: int          # send time relative to run start
    duration_ms: int = 0    # requested workload cost (0 for pings)


@dataclass(frozen=True, slots=True)
class MessageSchedule:
    entries: tuple[ScheduleEntry, ...]

    @property
    def last_offset_ms(self) -> int:
        return self.entries[-1].offset_ms if self.entries else 0

    def workload_entries(self) -> list[ScheduleEntry]:
        return [e for e in self.entries if e.kind == "S"]


def build_schedule(durations_ms=DEFAULT_DURATIONS_MS) -> MessageSchedule:
    """The standard 40-entry schedule; takes exactly one duration per
    workload slot, each positive."""

    durations = tuple(durations_ms)
    if len(durations) != len(WORKLOAD_INDICES):
        raise ConfigError(f"need exactly {len(WORKLOAD_INDICES)} durations, got {len(durations)}")
    if not all(isinstance(d, int) and d > 0 for d in durations):
        raise ConfigError(f"durations must be positive integers, got {durations}")
    entries = []
    workload = dict(zip(WORKLOAD_INDICES, durations))
    for i in range(1, MESSAGE_COUNT + 1):
        offset = (i - 1) * SPACING_MS
        if i in workload:
            entries.append(ScheduleEntry(i, "S", offset, workload[i]))
        else:
            entries.append(ScheduleEntry(i, "p", offset))
    return MessageSchedule(tuple(entries))


def build_idle_schedule() -> MessageSchedule:
    """Same cadence, pings only; used to measure an idle baseline."""

    entries = tuple(ScheduleEntry(i, "p", (i - 1) * SPACING_MS)
                    for i in range(1, MESSAGE_COUNT + 1))
    return MessageSchedule(entries)


@dataclass(slots=True)
class DelaySample:
    index: int
    kind: str
    variant: str
    sent_at_ms: float
    responded_at_ms: float | None = None
    status: str | None = None        # OK | ERROR | REFUSED | None (no response)

    @property
    def delay_ms(self) -> float | None:
        if self.responded_at_ms is None:
            return None
        return self.responded_at_ms - self.sent_at_ms


@dataclass(slots=True)
class ExperimentReport:
    variant: str
    workload: str
    samples: list[DelaySample] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return all(s.responded_at_ms is not None for s in self.samples)

    def ping_delays(self) -> list[float]:
        return [s.delay_ms for s in self.samples if s.kind == "p" and s.delay_ms is not None]

    def median_ping_delay_ms(self) -> float:
        delays = self.ping_delays()
        return statistics.median(delays) if delays else float("nan")

    def max_ping_delay_ms(self) -> float:
        delays = self.ping_delays()
        return max(delays) if delays else float("nan")

    def span_ms(self) -> float:
        """First send to last response; the experiment's total footprint."""

        responded = [s.responded_at_ms for s in self.samples if s.responded_at_ms is not None]
        if not responded or not self.samples:
            return float("nan")
        return max(responded) - min(s.sent_at_ms for s in self.samples)

    def total_delay_ms(self) -> float:
        return sum(s.delay_ms for s in self.samples if s.delay_ms is not None)


# --- the blocking strawman ----------------------------------------------------

class InlineEngineResponder(Behavior):
    """Executes engine actions on the agent's own loop thread.  Exists only
    as the benchmark's point of comparison: while it grinds, every queued
    message — pings included — waits."""

    kind = BehaviorKind.CYCLIC

    def __init__(self):
        super().__init__("inline-engine")
        self._template = ReceiveTemplate(performative=Performative.REQUEST,
                                         ontology=ONTOLOGY_ENGINE)

    def step(self, agent: Agent) -> bool:
        msg = agent.queue.take(self._template)
        if msg is None:
            return False
        engine: Engine = agent.engine
        engine.acquire()
        try:
            result = dispatch_action(engine, msg.content, workdir=agent.workdir)
        finally:
            engine.release()
        perf = Performative.INFORM if result.status == "OK" else Performative.FAILURE
        agent.send(AclMessage(
            performative=perf, sender=agent.id, receivers=(msg.sender,),
            conversation_id=msg.conversation_id, content=result,
            ontology=ONTOLOGY_ENGINE, in_reply_to=msg.reply_with,
        ))
        return True


def make_blocking_agent(platform: Platform, name: str) -> Agent:
    agent = platform.register_agent(name, engine=Engine())
    agent.add_behavior(PresenceResponder())
    agent.add_behavior(InlineEngineResponder())
    return agent


# --- the analyzer ----------------------------------------------------------------

def _entry_message(entry: ScheduleEntry, sender: AgentId, target: AgentId,
                   variant: str, workload: str, puzzles: list[str],
                   workload_ordinal: int = 0) -> AclMessage:
    conv = f"bench-{entry.index:03d}"
    if entry.kind == "p":
        return AclMessage(Performative.REQUEST, sender, (target,), conv,
                          "ping", ONTOLOGY_PRESENCE, reply_with=conv)
    if workload == "sudoku":
        puzzle = puzzles[workload_ordinal % len(puzzles)]
        command = f'(solve-sudoku "{puzzle}")'
    else:
        command = f"(burn {entry.duration_ms})"
    action = make_engine_action("EVAL_COMMAND", (command,))
    return AclMessage(Performative.REQUEST, sender, (target,), conv,
                      action, ONTOLOGY_ENGINE, reply_with=conv)


class _AnalyzerRun(Behavior):
    """One-shot behavior that owns the whole experiment on the analyzer's
    thread: paced sends, opportunistic receives, final drain."""

    kind = BehaviorKind.ONE_SHOT

    def __init__(self, schedule: MessageSchedule, target: AgentId, variant: str,
                 workload: str, timeout_s: float, report: ExperimentReport):
        super().__init__("analyzer-run")
        self.schedule = schedule
        self.target = target
        self.variant = variant
        self.workload = workload
        self.timeout_s = timeout_s
        self.report = report
        self.finished = False
        self._terminal = ReceiveTemplate()   # match anything; filter below

    def step(self, agent: Agent) -> bool:
        try:
            self._run(agent)
        finally:
            self.finished = True
            agent.notify()
        return True

    def _run(self, agent: Agent) -> None:
        puzzles = _load_puzzles() if self.workload == "sudoku" else []
        by_conv: dict[str, DelaySample] = {}
        start = time.monotonic()

        # Response arrival is the moment a message lands in the analyzer's
        # inbox, stamped by a queue tap on the delivering thread.  Stamping
        # at dequeue instead would add the analyzer's own wakeup latency to
        # every measured delay.  One process-wide monotonic clock either way.
        # Keyed by (conversation, performative): an S conversation sees an
        # AGREE before its terminal INFORM.
        arrivals: dict[tuple[str, str], float] = {}

        def tap(event) -> None:
            if event.kind == "enqueue":
                arrivals.setdefault((event.detail["conv"], event.detail["perf"]),
                                    event.ts_ms)

        agent.add_trace_hook(tap)

        def drain() -> bool:
            got = False
            while True:
                msg = agent.queue.take()
                if msg is None:
                    return got
                got = True
                key = (msg.conversation_id, msg.performative.value)
                arrival_ms = arrivals.get(key, time.monotonic() * 1000.0) - start * 1000.0
                sample = by_conv.get(msg.conversation_id)
                if sample is None:
                    continue
                if msg.performative in (Performative.INFORM, Performative.FAILURE):
                    if sample.responded_at_ms is None:
                        sample.responded_at_ms = arrival_ms
                        sample.status = _status_of(msg)
                elif msg.performative is Performative.REFUSE:
                    if sample.responded_at_ms is None:
                        sample.responded_at_ms = arrival_ms
                        sample.status = "REFUSED"

        def wait_until(deadline: float) -> None:
            while True:
                token = agent.wake_token()
                if drain():
                    continue
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return
                agent.wait_for_event(token, remaining)

        ordinals = {e.index: i for i, e in
                    enumerate(self.schedule.workload_entries())}
        for entry in self.schedule.entries:
            wait_until(start + entry.offset_ms / 1000.0)
            msg = _entry_message(entry, agent.id, self.target,
                                 self.variant, self.workload, puzzles,
                                 ordinals.get(entry.index, 0))
            sample = DelaySample(index=entry.index, kind=entry.kind,
                                 variant=self.variant,
                                 sent_at_ms=(time.monotonic() - start) * 1000.0)
            by_conv[msg.conversation_id] = sample
            self.report.samples.append(sample)
            agent.send(msg)

        hard_deadline = start + self.timeout_s
        while time.monotonic() < hard_deadline:
            if all(s.responded_at_ms is not None for s in self.report.samples):
                break
            wait_until(min(hard_deadline, time.monotonic() + 0.25))


def _status_of(msg: AclMessage) -> str:
    from .acl import ResultPayload
    if isinstance(msg.content, ResultPayload):
        return msg.content.status
    return "OK" if msg.performative is Performative.INFORM else "ERROR"


def _load_puzzles() -> list[str]:
    from importlib import resources
    root = resources.files("rulehive.data").joinpath("puzzles")
    out = []
    for ref in sorted(root.iterdir(), key=lambda r: r.name):
        if ref.name.endswith(".txt"):
            out.append(ref.read_text().strip())
    if not out:
        raise ConfigError("no bundled puzzles found")
    return out


def run_experiment(variant: str, durations_ms=DEFAULT_DURATIONS_MS, *,
                   schedule: MessageSchedule | None = None, workload: str = "burn",
                   timeout_s: float = 60.0) -> ExperimentReport:
    """Run one variant on a fresh in-process platform and return its report."""

    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
    if workload not in ("burn", "sudoku"):
        raise ConfigError(f"workload must be burn or sudoku, got {workload!r}")
    if schedule is None:
        schedule = build_schedule(durations_ms)

    platform = Platform()
    if variant == "nonblocking":
        target = make_rule_agent(platform, "responder")
    else:
        target = make_blocking_agent(platform, "responder")
    analyzer = platform.register_agent("analyzer")
    report = ExperimentReport(variant=variant, workload=workload)
    run = _AnalyzerRun(schedule, target.id, variant, workload, timeout_s, report)
    analyzer.add_behavior(run)
    # Sub-millisecond delays are the signal here, so apply the usual
    # latency-measurement hygiene for the duration of the run: a short
    # interpreter thread-switch interval (a waiting agent thread can force a
    # GIL handoff only after this long, so the default 5 ms — or even 1 ms —
    # shows up directly as ping-delay spikes) and no collector pauses (the
    # run allocates little; collect once up front and once after).
    previous_switch = sys.getswitchinterval()
    gc_was_enabled = gc.isenabled()
    gc.collect()
    gc.disable()
    sys.setswitchinterval(0.0002)
    platform.start()
    try:
        deadline = time.monotonic() + timeout_s + 10.0
        token = analyzer.wake_token()
        while not run.finished and time.monotonic() < deadline:
            token = analyzer.wait_for_event(token, 0.25)
    finally:
        platform.stop()
        sys.setswitchinterval(previous_switch)
        if gc_was_enabled:
            gc.enable()
            gc.collect()
    return report


# --- persistence and comparison -----------------------------------------------------

def write_csv(report: ExperimentReport, path: Path | str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for s in report.samples:
            responded = "" if s.responded_at_ms is None else f"{s.responded_at_ms:.3f}"
            delay = "" if s.delay_ms is None else f"{s.delay_ms:.3f}"
            writer.writerow([s.index, s.kind, s.variant, f"{s.sent_at_ms:.3f}",
                             responded, delay])


def read_csv(path: Path | str) -> ExperimentReport:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != CSV_HEADER:
        raise ComparisonError(f"{path}: expected header {','.join(CSV_HEADER)}")
    samples = []
    variants = set()
    try:
        for row in rows[1:]:
            index, kind, variant, sent, responded, _delay = row
            samples.append(DelaySample(
                index=int(index), kind=kind, variant=variant,
                sent_at_ms=float(sent),
                responded_at_ms=float(responded) if responded else None,
            ))
            variants.add(variant)
    except ValueError as exc:
        raise ComparisonError(f"{path}: bad row {row}: {exc}") from None
    if len(variants) > 1:
        raise ComparisonError(f"{path}: mixes variants {sorted(variants)}")
    report = ExperimentReport(variant=samples[0].variant if samples else "?",
                              workload="burn")
    report.samples = samples
    return report


@dataclass(slots=True)
class Comparison:
    nonblocking: ExperimentReport
    blocking: ExperimentReport

    @property
    def gap_ms(self) -> float:
        return self.blocking.span_ms() - self.nonblocking.span_ms()

    def stall_after_workload(self, report: ExperimentReport,
                             durations: dict[int, int]) -> dict[int, bool]:
        """For each workload entry: did any *later* ping wait at least half
        that workload's duration?  True for every entry is the signature of
        an agent that runs engine work on its message loop."""

        out = {}
        for s_index, duration in durations.items():
            threshold = duration / 2.0
            out[s_index] = any(
                s.kind == "p" and s.index > s_index
                and s.delay_ms is not None and s.delay_ms >= threshold
                for s in report.samples
            )
        return out

    def summary_lines(self, durations: dict[int, int] | None = None) -> list[str]:
        durations = durations or dict(zip(WORKLOAD_INDICES, DEFAULT_DURATIONS_MS))
        a, b = self.nonblocking, self.blocking
        lines = [
            f"{'':>24}  {'nonblocking':>12}  {'blocking':>12}",
            f"{'span_ms':>24}  {a.span_ms():>12.1f}  {b.span_ms():>12.1f}",
            f"{'total_delay_ms':>24}  {a.total_delay_ms():>12.1f}  {b.total_delay_ms():>12.1f}",
            f"{'median_ping_delay_ms':>24}  {a.median_ping_delay_ms():>12.2f}  {b.median_ping_delay_ms():>12.2f}",
            f"{'max_ping_delay_ms':>24}  {a.max_ping_delay_ms():>12.2f}  {b.max_ping_delay_ms():>12.2f}",
            f"span gap (blocking - nonblocking): {self.gap_ms:.1f} ms",
            f"total delay gap: {b.total_delay_ms() - a.total_delay_ms():.1f} ms",
        ]
        stalls_b = self.stall_after_workload(b, durations)
        stalls_a = self.stall_after_workload(a, durations)
        lines.append("blocking stalls after workloads: "
                     + ", ".join(f"#{i}={'yes' if v else 'no'}" for i, v in sorted(stalls_b.items())))
        lines.append("nonblocking stalls after workloads: "
                     + ", ".join(f"#{i}={'yes' if v else 'no'}" for i, v in sorted(stalls_a.items())))
        return lines


def compare(nonblocking: ExperimentReport, blocking: ExperimentReport) -> Comparison:
    if {nonblocking.variant, blocking.variant} != set(VARIANTS):
        raise ComparisonError(
            f"need one report per variant, got {nonblocking.variant!r} and {blocking.variant!r}")
    layout_a = [(s.index, s.kind) for s in nonblocking.samples]
    layout_b = [(s.index, s.kind) for s in blocking.samples]
    if layout_a != layout_b:
        raise ComparisonError("reports use different schedules; nothing to compare")
    return Comparison(nonblocking=nonblocking, blocking=blocking)
