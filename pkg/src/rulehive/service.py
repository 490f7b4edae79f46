"""WebSocket service wrapping :class:`~rulehive.gateway.Gateway`.

Framing (all JSON):

* client → server: ``{"id": <any>, "kind": <request kind>, "target":
  <agent name | "itself" | null>, "body": {...}}``
* server → client: ``{"id": <echoed>, "ok": true|false, "body": {...}}``
  for each request, plus unsolicited ``{"event": "exec"|"trace"|..., "body":
  {...}}`` frames.

Event frames are pushed the moment the platform produces them, so an
``exec`` update can reach the client before the response envelope that
names its conversation; clients correlate by ``conversation_id``, not by
arrival order.

All gateway work runs on worker threads (a synchronous shell command may
legitimately block for seconds); frames cross back into the event loop via
``call_soon_threadsafe``.
"""

from __future__ import annotations

import asyncio
import os
import threading
import time
from dataclasses import dataclass

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from pydantic import BaseModel

from .errors import DecodeError, RulehiveError
from .gateway import Gateway
from .runtime import DIRECTORY_AGENT_NAME, Platform

DEFAULT_PLATFORM_PORT = 7601
PLATFORM_PORT_ENV = "RS_PLATFORM_PORT"


def base_port() -> int:
    return int(os.environ.get(PLATFORM_PORT_ENV, str(DEFAULT_PLATFORM_PORT)))


class AgentStatus(BaseModel):
    agent: str
    runlevel: int | None
    in_service: bool
    platform: str | None


def create_app(gateway: Gateway) -> FastAPI:
    app = FastAPI(title=f"rulehive gateway: {gateway.agent.name}")

    @app.get("/health", response_model=AgentStatus)
    def health() -> AgentStatus:
        return AgentStatus(**gateway.describe())

    @app.websocket("/gateway")
    async def gateway_ws(ws: WebSocket) -> None:
        await ws.accept()
        loop = asyncio.get_running_loop()
        outbox: asyncio.Queue[dict] = asyncio.Queue()
        conversations: set[str] = set()
        subscription = None

        def push(frame: dict) -> None:
            """Hand a frame to the writer from any thread."""

            try:
                loop.call_soon_threadsafe(outbox.put_nowait, frame)
            except RuntimeError:
                pass   # loop already closed; the client is gone anyway

        async def writer() -> None:
            while True:
                await ws.send_json(await outbox.get())

        trace_wake = asyncio.Event()

        async def trace_pump() -> None:
            while True:
                await trace_wake.wait()
                trace_wake.clear()
                if subscription is not None:
                    for event in subscription.drain():
                        await outbox.put({"event": "trace", "body": event})

        writer_task = asyncio.create_task(writer())
        pump_task = asyncio.create_task(trace_pump())

        def on_exec_event(event: dict) -> None:
            push({"event": "exec", "body": event})

        try:
            while True:
                request = await ws.receive_json()
                req_id = request.get("id") if isinstance(request, dict) else None
                try:
                    if not isinstance(request, dict) or "kind" not in request:
                        raise DecodeError("expected {id, kind, target, body}")
                    kind = request["kind"]
                    target = request.get("target")
                    body = request.get("body") or {}
                    if kind == "SUBSCRIBE_TRACE":
                        if subscription is None:
                            subscription = gateway.subscribe_trace(
                                notify=lambda: loop.call_soon_threadsafe(trace_wake.set),
                                limit=int(body.get("limit", 1024)),
                            )
                        response = {"subscribed": gateway.agent.name}
                    else:
                        response = await asyncio.to_thread(
                            gateway.handle_request, kind, target, body, on_exec_event)
                        if kind == "EXEC_ASYNC":
                            conversations.add(response["conversation_id"])
                    await outbox.put({"id": req_id, "ok": True, "body": response})
                except RulehiveError as exc:
                    await outbox.put({"id": req_id, "ok": False,
                                      "body": {"error": exc.code, "detail": exc.detail}})
        except WebSocketDisconnect:
            pass
        finally:
            writer_task.cancel()
            pump_task.cancel()
            if subscription is not None:
                subscription.close()
            for conv in conversations:
                gateway.cancel_exec(conv)

    return app


@dataclass
class GatewayServer:
    """One running uvicorn server bound to one agent's gateway."""

    gateway: Gateway
    port: int
    _server: object
    _thread: threading.Thread

    @property
    def agent_name(self) -> str:
        return self.gateway.agent.name

    def stop(self, timeout: float = 5.0) -> None:
        self._server.should_exit = True
        self._thread.join(timeout)
        self.gateway.close()


def serve_gateways(platform: Platform, *, host: str = "127.0.0.1",
                   port_base: int | None = None,
                   agents: list[str] | None = None,
                   startup_timeout: float = 10.0) -> list[GatewayServer]:
    """Start one gateway server per development-mode agent.

    Each agent's console port is the platform base port plus the agent's
    registration ordinal, so a whole platform's consoles are predictable
    from one number.  Production deployments simply never call this.
    """

    import uvicorn

    base = port_base if port_base is not None else base_port()
    if agents is None:
        agents = [a.name for a in platform.agents()
                  if a.name != DIRECTORY_AGENT_NAME]
    servers: list[GatewayServer] = []
    for name in agents:
        agent = platform.agent(name)
        gateway = Gateway(platform, agent)
        app = create_app(gateway)
        config = uvicorn.Config(app, host=host, port=base + agent.ordinal,
                                log_level="warning")
        server = uvicorn.Server(config)
        thread = threading.Thread(target=server.run,
                                  name=f"gateway-{name}", daemon=True)
        thread.start()
        servers.append(GatewayServer(gateway, base + agent.ordinal, server, thread))
    deadline = time.monotonic() + startup_timeout
    for entry in servers:
        while not entry._server.started and time.monotonic() < deadline:
            time.sleep(0.01)
    return servers
