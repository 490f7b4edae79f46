/**
 * Console session state: the agent directory, the runlevel badge, and the
 * conversation log of the asynchronous shell.
 *
 * All state lives in plain objects mutated on the UI event loop; the DOM
 * layer re-renders from here and owns nothing.
 */

import {
  ExecEvent,
  GatewayClient,
  GatewayError,
  ResultPayload,
} from "./protocol.js";

export const SELF_TARGET = "itself";

export type Direction = "OUTGOING" | "RESPONSE";

export interface ConversationEntry {
  direction: Direction;
  text: string;
  conversationId: string;
  timestamp: number;
}

/**
 * One shell command and everything that came back for it. Entries render
 * contiguously per group, so interleaved arrivals across conversations can
 * never shuffle a conversation's own lines.
 */
export interface ConversationGroup {
  conversationId: string; // "pending-N" until the gateway names it
  target: string;
  entries: ConversationEntry[];
  done: boolean;
}

/** The one-line rendering of an exec event. */
export function entryText(event: ExecEvent): string {
  const content = event.content;
  if (content && typeof content === "object") {
    const payload = content as ResultPayload;
    return payload.output
      ? `${event.performative}: ${payload.output}`
      : event.performative;
  }
  if (typeof content === "string" && content) {
    return `${event.performative}: ${content}`;
  }
  return event.performative;
}

export function formatBadge(report: {
  runlevel: number | null;
  in_service: boolean;
}): string {
  if (report.runlevel === null) {
    return "—";
  }
  return report.in_service
    ? `${report.runlevel} (in service)`
    : `${report.runlevel}`;
}

export class ConsoleSession {
  readonly conversations: ConversationGroup[] = [];
  agentName = "";
  directory: string[] = [];
  runlevelBadge = "—";

  private pendingSeq = 0;
  private readonly byConversation = new Map<string, ConversationGroup>();
  private readonly unclaimed = new Map<string, ExecEvent[]>();
  private lost = false;

  constructor(
    private readonly client: GatewayClient,
    private readonly clock: () => number = Date.now,
  ) {
    client.onExec((event) => this.routeExec(event));
    client.onClose(() => this.markConnectionLost());
  }

  /**
   * Input stays usable no matter how many commands are outstanding; only a
   * dead gateway connection closes the shell.
   */
  get inputEnabled(): boolean {
    return !this.lost;
  }

  async refreshDirectory(): Promise<string[]> {
    const body = await this.client.request<{
      attached: string;
      agents: string[];
    }>("LIST_AGENTS", null, {});
    this.agentName = body.attached;
    this.directory = [SELF_TARGET, ...body.agents];
    return this.directory;
  }

  /**
   * Dispatch one asynchronous shell command. The outgoing entry is appended
   * synchronously — before the gateway answers — and the group fills in as
   * AGREE/REFUSE and the terminal result arrive.
   */
  sendAsync(target: string, command: string): ConversationGroup {
    const group: ConversationGroup = {
      conversationId: `pending-${++this.pendingSeq}`,
      target,
      entries: [],
      done: false,
    };
    this.appendEntry(group, "OUTGOING", command);
    this.conversations.push(group);
    this.byConversation.set(group.conversationId, group);
    this.client
      .request<{ conversation_id: string }>("EXEC_ASYNC", target, { command })
      .then((body) => this.adopt(group, body.conversation_id))
      .catch((error: unknown) => this.failGroup(group, error));
    return group;
  }

  async execSync(command: string): Promise<string> {
    const body = await this.client.request<{ output: string }>(
      "EXEC_SYNC", SELF_TARGET, { command });
    return body.output;
  }

  async setRunlevel(button: string): Promise<string> {
    const body = await this.client.request<{
      runlevel: number | null;
      in_service: boolean;
    }>("SET_RUNLEVEL", SELF_TARGET, { level: button });
    this.runlevelBadge = formatBadge(body);
    return this.runlevelBadge;
  }

  private appendEntry(
    group: ConversationGroup,
    direction: Direction,
    text: string,
  ): void {
    group.entries.push({
      direction,
      text,
      conversationId: group.conversationId,
      timestamp: this.clock(),
    });
  }

  /** The gateway named the conversation; claim any events that beat it. */
  private adopt(group: ConversationGroup, conversationId: string): void {
    this.byConversation.delete(group.conversationId);
    group.conversationId = conversationId;
    for (const entry of group.entries) {
      entry.conversationId = conversationId;
    }
    this.byConversation.set(conversationId, group);
    const early = this.unclaimed.get(conversationId);
    if (early) {
      this.unclaimed.delete(conversationId);
      for (const event of early) {
        this.applyExec(group, event);
      }
    }
  }

  private failGroup(group: ConversationGroup, error: unknown): void {
    const text =
      error instanceof GatewayError
        ? `${error.code}: ${error.detail}`
        : String(error);
    this.appendEntry(group, "RESPONSE", text);
    group.done = true;
  }

  private routeExec(event: ExecEvent): void {
    const group = this.byConversation.get(event.conversation_id);
    if (!group) {
      const queue = this.unclaimed.get(event.conversation_id) ?? [];
      queue.push(event);
      this.unclaimed.set(event.conversation_id, queue);
      return;
    }
    this.applyExec(group, event);
  }

  private applyExec(group: ConversationGroup, event: ExecEvent): void {
    this.appendEntry(group, "RESPONSE", entryText(event));
    if (event.terminal) {
      group.done = true;
    }
  }

  private markConnectionLost(): void {
    if (this.lost) {
      return;
    }
    this.lost = true;
    for (const group of this.conversations) {
      if (!group.done) {
        this.appendEntry(group, "RESPONSE", "CONNECTION_LOST");
        group.done = true;
      }
    }
  }
}
