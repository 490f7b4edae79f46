/**
 * Gateway wire protocol.
 *
 * One WebSocket carries JSON text frames in both directions:
 *
 *   request   {id, kind, target, body}
 *   response  {id, ok: true, body}  or  {id, ok: false, body: {error, detail}}
 *   event     {event: "exec" | "trace", body}
 *
 * Event frames are unsolicited and may arrive *before* the response to the
 * request that caused them; callers correlate exec events by
 * conversation_id, never by arrival order.
 */

export type RequestKind =
  | "LIST_AGENTS"
  | "EXEC_ASYNC"
  | "EXEC_SYNC"
  | "SET_RUNLEVEL"
  | "GET_FILE"
  | "PUT_FILE"
  | "SUBSCRIBE_TRACE";

export interface ResultPayload {
  status: string;
  output: string;
  elapsed_ms: number;
}

export interface ExecEvent {
  conversation_id: string;
  performative: string;
  sender: string;
  content: ResultPayload | string | null;
  terminal: boolean;
}

export interface TraceEvent {
  kind: string;
  [extra: string]: unknown;
}

/** A request the gateway answered with {ok: false}. */
export class GatewayError extends Error {
  constructor(readonly code: string, readonly detail: string) {
    super(detail ? `${code}: ${detail}` : code);
    this.name = "GatewayError";
  }
}

/**
 * The slice of the WebSocket API the client needs; satisfied by the browser
 * WebSocket, the `ws` package, and the in-memory fake used in tests.
 */
export interface SocketLike {
  readyState: number;
  send(data: string): void;
  close(): void;
  addEventListener(
    type: "open" | "message" | "close" | "error",
    listener: (event: { data?: unknown }) => void,
  ): void;
}

const SOCKET_OPEN = 1;

interface Pending {
  resolve: (body: never) => void;
  reject: (error: Error) => void;
}

export class GatewayClient {
  private nextId = 0;
  private readonly pending = new Map<string, Pending>();
  private readonly execHandlers: Array<(event: ExecEvent) => void> = [];
  private readonly traceHandlers: Array<(event: TraceEvent) => void> = [];
  private readonly closeHandlers: Array<() => void> = [];
  private readonly opened: Promise<void>;
  private closed = false;

  constructor(private readonly socket: SocketLike) {
    this.opened =
      socket.readyState === SOCKET_OPEN
        ? Promise.resolve()
        : new Promise((resolve) =>
            socket.addEventListener("open", () => resolve()));
    socket.addEventListener("message", (event) =>
      this.dispatch(String(event.data)));
    socket.addEventListener("close", () => this.handleClose());
    socket.addEventListener("error", () => this.handleClose());
  }

  async request<T = Record<string, unknown>>(
    kind: RequestKind,
    target: string | null,
    body: Record<string, unknown>,
  ): Promise<T> {
    await this.opened;
    if (this.closed) {
      throw new GatewayError("CONNECTION_LOST", "gateway socket closed");
    }
    const id = `c-${++this.nextId}`;
    const frame = JSON.stringify({ id, kind, target, body });
    return new Promise<T>((resolve, reject) => {
      this.pending.set(id, { resolve: resolve as Pending["resolve"], reject });
      this.socket.send(frame);
    });
  }

  onExec(handler: (event: ExecEvent) => void): void {
    this.execHandlers.push(handler);
  }

  onTrace(handler: (event: TraceEvent) => void): void {
    this.traceHandlers.push(handler);
  }

  onClose(handler: () => void): void {
    this.closeHandlers.push(handler);
  }

  close(): void {
    this.socket.close();
    this.handleClose();
  }

  private dispatch(text: string): void {
    let frame: Record<string, unknown>;
    try {
      frame = JSON.parse(text) as Record<string, unknown>;
    } catch {
      return; // not ours; the gateway only speaks JSON
    }
    if (frame["event"] === "exec") {
      for (const handler of this.execHandlers) {
        handler(frame["body"] as ExecEvent);
      }
      return;
    }
    if (frame["event"] === "trace") {
      for (const handler of this.traceHandlers) {
        handler(frame["body"] as TraceEvent);
      }
      return;
    }
    const waiter = this.pending.get(String(frame["id"]));
    if (!waiter) {
      return;
    }
    this.pending.delete(String(frame["id"]));
    if (frame["ok"]) {
      waiter.resolve(frame["body"] as never);
    } else {
      const body = (frame["body"] ?? {}) as { error?: string; detail?: unknown };
      waiter.reject(
        new GatewayError(body.error ?? "UNKNOWN", String(body.detail ?? "")));
    }
  }

  private handleClose(): void {
    if (this.closed) {
      return;
    }
    this.closed = true;
    for (const waiter of this.pending.values()) {
      waiter.reject(
        new GatewayError("CONNECTION_LOST", "gateway socket closed"));
    }
    this.pending.clear();
    for (const handler of this.closeHandlers) {
      handler();
    }
  }
}
