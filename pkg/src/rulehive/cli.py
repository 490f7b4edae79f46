"""Command-line entry points.

``serve`` boots a development platform (agents + gateways) in the current
process; everything else is a thin client: ``agents`` and ``shell`` speak
the gateway WebSocket protocol, and ``bench`` drives the latency
experiment and its CSV comparison.
"""

from __future__ import annotations

import json
import signal
import sys
import threading
from pathlib import Path

import click

from .benchmark import (
    DEFAULT_DURATIONS_MS,
    WORKLOAD_INDICES,
    build_idle_schedule,
    build_schedule,
    compare,
    read_csv,
    run_experiment,
    write_csv,
)
from .errors import RulehiveError


@click.group()
def main() -> None:
    """Rule-engine agents, their platform, and the dev tools around them."""


# --- serve ----------------------------------------------------------------------


@main.command()
@click.option("--agents", "agent_names", default="Agent200,Agent300",
              show_default=True, help="Comma-separated agent names to create.")
@click.option("--workdir", type=click.Path(file_okay=False, path_type=Path),
              default=Path("./agents"), show_default=True,
              help="Directory holding one script/rules folder per agent.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port-base", type=int, default=None,
              help="Platform port; gateways bind base+ordinal. "
                   "Defaults to $RS_PLATFORM_PORT or 7601.")
@click.option("--no-listener", is_flag=True,
              help="Skip the platform TCP listener (single-process dev).")
@click.option("--runlevel", "level", type=int, default=5, show_default=True,
              help="Runlevel each agent is driven to at boot.")
def serve(agent_names: str, workdir: Path, host: str, port_base: int | None,
          no_listener: bool, level: int) -> None:
    """Run a development platform with one gateway per agent."""

    from .ruleagent import make_rule_agent
    from .runlevels import request_runlevel, write_default_scripts
    from .runtime import Platform
    from .service import base_port, serve_gateways

    base = port_base if port_base is not None else base_port()
    names = [n.strip() for n in agent_names.split(",") if n.strip()]
    if not names:
        raise click.UsageError("need at least one agent name")

    platform = Platform(host=host, port=None if no_listener else base,
                        workdir=workdir)
    for name in names:
        agent = make_rule_agent(platform, name, standard_behaviors=False)
        write_default_scripts(agent.workdir)
    platform.start()
    try:
        for name in names:
            report = request_runlevel(platform.agent(name), level)
            click.echo(f"{name}: runlevel {report['runlevel']}"
                       + (f", activated {', '.join(report['activated'])}"
                          if report["activated"] else ""))
        servers = serve_gateways(platform, host=host, port_base=base)
        for server in servers:
            click.echo(f"{server.agent_name}: "
                       f"ws://{host}:{server.port}/gateway")
        click.echo("platform up; Ctrl-C to stop")
        stop = threading.Event()
        signal.signal(signal.SIGINT, lambda *_: stop.set())
        signal.signal(signal.SIGTERM, lambda *_: stop.set())
        stop.wait()
        for server in servers:
            server.stop()
    finally:
        platform.stop()


# --- thin websocket clients -----------------------------------------------------


def _gateway_url(url: str) -> str:
    if not url.startswith(("ws://", "wss://")):
        url = f"ws://{url}"
    if not url.endswith("/gateway"):
        url = url.rstrip("/") + "/gateway"
    return url


def _request(ws, req_id: int, kind: str, target: str | None,
             body: dict) -> tuple[dict, list[dict]]:
    """Send one envelope and wait for its response.

    Event frames legitimately race ahead of the response envelope, so any
    that arrive first are printed immediately and also returned — a caller
    waiting on a conversation must correlate against them, not assume the
    stream starts after the response."""

    ws.send(json.dumps({"id": req_id, "kind": kind, "target": target,
                        "body": body}))
    events: list[dict] = []
    while True:
        frame = json.loads(ws.recv())
        if frame.get("id") == req_id:
            return frame, events
        if "event" in frame:
            _print_event(frame)
            events.append(frame)


def _print_event(frame: dict) -> None:
    body = frame.get("body", {})
    if frame.get("event") == "exec":
        content = body.get("content")
        if isinstance(content, dict):
            content = content.get("output") or content.get("status", "")
        click.echo(f"  [{body.get('conversation_id')}] "
                   f"{body.get('performative')} {content}")
    else:
        click.echo(f"  [{frame.get('event')}] {json.dumps(body)}")


@main.command()
@click.argument("url")
def agents(url: str) -> None:
    """List the platform directory through a gateway (URL like host:7602)."""

    from websockets.sync.client import connect

    with connect(_gateway_url(url)) as ws:
        frame, _ = _request(ws, 1, "LIST_AGENTS", None, {})
        if not frame.get("ok"):
            raise click.ClickException(json.dumps(frame.get("body")))
        body = frame["body"]
        for name in body["agents"]:
            suffix = "  (itself)" if name == body["attached"] else ""
            click.echo(f"{name}{suffix}")


@main.command()
@click.argument("url")
@click.option("--sync", "sync_mode", is_flag=True,
              help="Use the synchronous shell (local engine, blocking).")
@click.option("--target", default="itself", show_default=True,
              help="Agent receiving async commands.")
def shell(url: str, sync_mode: bool, target: str) -> None:
    """Interactive shell against a gateway.

    Plain input is an engine command.  Meta commands: :agents, :target
    NAME, :runlevel n-1|n-3|n-5|n-6!, :quit.
    """

    from websockets.sync.client import connect

    mode = "sync" if sync_mode else "async"
    req_id = 0
    with connect(_gateway_url(url)) as ws:
        click.echo(f"connected ({mode} shell, target {target}); :quit to exit")
        while True:
            try:
                line = click.prompt("", prompt_suffix="> ", show_default=False)
            except (click.Abort, EOFError):
                break
            line = line.strip()
            if not line:
                continue
            if line in (":quit", ":q"):
                break
            req_id += 1
            try:
                if line == ":agents":
                    frame, _ = _request(ws, req_id, "LIST_AGENTS", None, {})
                elif line.startswith(":target"):
                    target = line.split(None, 1)[1].strip()
                    click.echo(f"target = {target}")
                    continue
                elif line.startswith(":runlevel"):
                    level = line.split(None, 1)[1].strip()
                    frame, _ = _request(ws, req_id, "SET_RUNLEVEL", target,
                                        {"level": level})
                elif sync_mode:
                    frame, _ = _request(ws, req_id, "EXEC_SYNC", "itself",
                                        {"command": line})
                else:
                    frame, early = _request(ws, req_id, "EXEC_ASYNC", target,
                                            {"command": line})
                    if frame.get("ok"):
                        conv = frame["body"]["conversation_id"]
                        _wait_terminal(ws, conv, early)
                        continue
                _print_response(frame)
            except IndexError:
                click.echo("usage: :target NAME | :runlevel LEVEL")


def _is_terminal(frame: dict, conv: str) -> bool:
    body = frame.get("body", {})
    return (frame.get("event") == "exec"
            and body.get("conversation_id") == conv
            and bool(body.get("terminal")))


def _wait_terminal(ws, conv: str, early: list[dict] = ()) -> None:
    if any(_is_terminal(frame, conv) for frame in early):
        return   # the job finished before its response envelope arrived
    while True:
        frame = json.loads(ws.recv())
        if "event" in frame:
            _print_event(frame)
            if _is_terminal(frame, conv):
                return


def _print_response(frame: dict) -> None:
    body = frame.get("body", {})
    if frame.get("ok"):
        output = body.get("output")
        click.echo(output if output is not None else json.dumps(body))
    else:
        click.echo(f"error {body.get('error')}: {body.get('detail')}")


# --- bench ------------------------------------------------------------------------


@main.group()
def bench() -> None:
    """Latency experiment: run a variant, compare the resulting CSVs."""


def _parse_durations(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise click.UsageError(f"--durations must be integers, got {text!r}")


@bench.command("run")
@click.option("--variant", type=click.Choice(["nonblocking", "blocking"]),
              required=True)
@click.option("--durations", default=",".join(map(str, DEFAULT_DURATIONS_MS)),
              show_default=True, help="Four workload durations in ms.")
@click.option("--schedule", "schedule_kind",
              type=click.Choice(["standard", "idle"]), default="standard",
              show_default=True, help="idle = pings only, for a baseline.")
@click.option("--workload", type=click.Choice(["burn", "sudoku"]),
              default="burn", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path),
              required=True)
@click.option("--timeout", type=float, default=60.0, show_default=True)
def bench_run(variant: str, durations: str, schedule_kind: str, workload: str,
              out: Path, timeout: float) -> None:
    """Run one experiment variant and write its per-message CSV."""

    durations_ms = _parse_durations(durations)
    try:
        schedule = (build_idle_schedule() if schedule_kind == "idle"
                    else build_schedule(durations_ms))
        report = run_experiment(variant, durations_ms, schedule=schedule,
                                workload=workload, timeout_s=timeout)
    except RulehiveError as exc:
        raise click.ClickException(str(exc))
    write_csv(report, out)
    status = "complete" if report.complete else "INCOMPLETE"
    click.echo(f"{variant} ({schedule_kind}): {status}, "
               f"median ping {report.median_ping_delay_ms():.2f} ms, "
               f"max ping {report.max_ping_delay_ms():.2f} ms, "
               f"span {report.span_ms():.1f} ms -> {out}")


@bench.command("compare")
@click.argument("nonblocking_csv", type=click.Path(exists=True, path_type=Path))
@click.argument("blocking_csv", type=click.Path(exists=True, path_type=Path))
@click.option("--idle", "idle_csv", type=click.Path(exists=True, path_type=Path),
              default=None, help="Idle-baseline CSV for the 5x median check.")
@click.option("--durations", default=",".join(map(str, DEFAULT_DURATIONS_MS)),
              show_default=True, help="Durations the runs used, for the "
                                      "stall-signature check.")
def bench_compare(nonblocking_csv: Path, blocking_csv: Path,
                  idle_csv: Path | None, durations: str) -> None:
    """Print the comparison table and pass/fail verdicts for a run pair."""

    durations_ms = _parse_durations(durations)
    if len(durations_ms) != len(WORKLOAD_INDICES):
        raise click.UsageError(
            f"--durations needs {len(WORKLOAD_INDICES)} values")
    by_index = dict(zip(WORKLOAD_INDICES, durations_ms))
    try:
        a = read_csv(nonblocking_csv)
        b = read_csv(blocking_csv)
        reports = {r.variant: r for r in (a, b)}
        result = compare(reports.get("nonblocking", a), reports.get("blocking", b))
    except RulehiveError as exc:
        raise click.ClickException(str(exc))

    for line in result.summary_lines(by_index):
        click.echo(line)

    failed = False

    gap_ok = result.gap_ms >= 1500.0
    failed |= not gap_ok
    click.echo(f"[{'PASS' if gap_ok else 'FAIL'}] "
               f"blocking finishes >= 1500 ms after nonblocking "
               f"(measured {result.gap_ms:.1f} ms)")

    stalls_blocking = result.stall_after_workload(result.blocking, by_index)
    stalls_nonblocking = result.stall_after_workload(result.nonblocking, by_index)
    signature_ok = (all(stalls_blocking.values())
                    and not any(stalls_nonblocking.values()))
    failed |= not signature_ok
    click.echo(f"[{'PASS' if signature_ok else 'FAIL'}] "
               f"blocking stalls after every workload; nonblocking never does")

    if idle_csv is not None:
        idle = read_csv(idle_csv)
        budget = 5.0 * idle.median_ping_delay_ms()
        max_ping = result.nonblocking.max_ping_delay_ms()
        ratio_ok = max_ping <= budget
        failed |= not ratio_ok
        click.echo(f"[{'PASS' if ratio_ok else 'FAIL'}] "
                   f"nonblocking max ping {max_ping:.2f} ms within "
                   f"5 x idle median ({budget:.2f} ms)")

    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
