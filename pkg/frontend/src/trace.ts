/**
 * The live message trace: events in arrival order, plus a conversation
 * grouping for the grouped pane view.
 */

import { GatewayClient, TraceEvent } from "./protocol.js";

export const NO_CONVERSATION = "(no conversation)";

export interface TraceGroup {
  conversation: string;
  events: TraceEvent[];
}

export class TraceLog {
  readonly events: TraceEvent[] = [];
  private listeners: Array<() => void> = [];

  /** Subscribe over an existing client; resolves to the traced agent name. */
  async attach(client: GatewayClient, limit = 512): Promise<string> {
    client.onTrace((event) => this.add(event));
    const body = await client.request<{ subscribed: string }>(
      "SUBSCRIBE_TRACE", null, { limit });
    return body.subscribed;
  }

  add(event: TraceEvent): void {
    this.events.push(event);
    for (const listener of this.listeners) {
      listener();
    }
  }

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  /** Groups in first-seen conversation order, events in arrival order. */
  grouped(): TraceGroup[] {
    const groups = new Map<string, TraceGroup>();
    for (const event of this.events) {
      const detail = (event["detail"] ?? event) as Record<string, unknown>;
      const conversation = String(detail["conv"] ?? NO_CONVERSATION);
      let group = groups.get(conversation);
      if (!group) {
        group = { conversation, events: [] };
        groups.set(conversation, group);
      }
      group.events.push(event);
    }
    return [...groups.values()];
  }
}
