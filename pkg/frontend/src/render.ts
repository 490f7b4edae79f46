/**
 * Pure renderers: state in, HTML strings out. The color of every shell
 * entry is a function of its direction and nothing else — outgoing text is
 * blue, anything that came back is red.
 */

import { ConversationEntry, ConversationGroup, Direction } from "./session.js";
import { TraceGroup } from "./trace.js";

export function colorOf(direction: Direction): "blue" | "red" {
  return direction === "OUTGOING" ? "blue" : "red";
}

export function entryClass(direction: Direction): string {
  return direction === "OUTGOING" ? "entry-outgoing" : "entry-response";
}

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderEntry(entry: ConversationEntry): string {
  const arrow = entry.direction === "OUTGOING" ? "&raquo;" : "&laquo;";
  return (
    `<div class="${entryClass(entry.direction)}">` +
    `<span class="arrow">${arrow}</span> ` +
    `<pre>${escapeHtml(entry.text)}</pre></div>`
  );
}

export function renderGroup(group: ConversationGroup): string {
  const status = group.done ? "done" : "waiting";
  const header =
    `<div class="conv-header">${escapeHtml(group.conversationId)} ` +
    `&rarr; ${escapeHtml(group.target)} <em>${status}</em></div>`;
  const body = group.entries.map(renderEntry).join("");
  return `<section class="conversation" data-conversation="${escapeHtml(
    group.conversationId)}">${header}${body}</section>`;
}

export function renderConversations(groups: ConversationGroup[]): string {
  return groups.map(renderGroup).join("");
}

export function renderDirectory(names: string[], selected: string): string {
  return names
    .map((name) => {
      const cls = name === selected ? "agent selected" : "agent";
      return `<li class="${cls}" data-agent="${escapeHtml(name)}">${escapeHtml(
        name)}</li>`;
    })
    .join("");
}

export function renderFileList(names: string[], open: string | null): string {
  return names
    .map((name) => {
      const cls = name === open ? "file selected" : "file";
      return `<li class="${cls}" data-file="${escapeHtml(name)}">${escapeHtml(
        name)}</li>`;
    })
    .join("");
}

export function renderTraceGroups(groups: TraceGroup[]): string {
  return groups
    .map((group) => {
      const rows = group.events
        .map((event) => {
          const detail = JSON.stringify(event["detail"] ?? {});
          return `<div class="trace-event"><b>${escapeHtml(
            event.kind)}</b> <code>${escapeHtml(detail)}</code></div>`;
        })
        .join("");
      return (
        `<section class="trace-group"><div class="conv-header">${escapeHtml(
          group.conversation)}</div>${rows}</section>`
      );
    })
    .join("");
}

/**
 * Token-level highlighting for the rule and behavior script grammars:
 * comments, strings, numbers, leading keywords, and ?variables.
 */
export function highlightSource(text: string): string {
  const pattern =
    /(;[^\n]*)|("(?:[^"\\]|\\.)*")|(\?[A-Za-z][\w-]*)|(\(\s*(?:defrule|deffacts|behavior|kind|on|do|every|assert|retract|printout|declare|salience)\b)|(-?\d+(?:\.\d+)?)/g;
  let out = "";
  let last = 0;
  for (const match of text.matchAll(pattern)) {
    const at = match.index ?? 0;
    out += escapeHtml(text.slice(last, at));
    const [whole, comment, str, variable, keyword, num] = match;
    if (comment) out += `<span class="tok-comment">${escapeHtml(whole)}</span>`;
    else if (str) out += `<span class="tok-string">${escapeHtml(whole)}</span>`;
    else if (variable)
      out += `<span class="tok-var">${escapeHtml(whole)}</span>`;
    else if (keyword)
      out += `<span class="tok-keyword">${escapeHtml(whole)}</span>`;
    else if (num) out += `<span class="tok-number">${escapeHtml(whole)}</span>`;
    last = at + whole.length;
  }
  return out + escapeHtml(text.slice(last));
}
