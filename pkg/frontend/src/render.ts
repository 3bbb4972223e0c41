/**
 * Pure HTML rendering for the transcript and the per-turn trace view.
 * String in, string out — no DOM access, so the functions are directly
 * unit-testable under node.
 */

import { StageRecord, TurnTrace } from "./api.js";
import { TranscriptEntry } from "./store.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function renderMessage(role: "user" | "assistant", text: string): string {
  return (
    `<div class="message ${role}">` +
    `<span class="role">${role}</span>` +
    `<span class="text">${escapeHtml(text)}</span>` +
    `</div>`
  );
}

export function renderTranscript(entries: readonly TranscriptEntry[], pending: string | null = null): string {
  const parts: string[] = [];
  for (const entry of entries) {
    parts.push(renderMessage("user", entry.userInput));
    parts.push(renderMessage("assistant", entry.reply));
  }
  if (pending !== null) {
    parts.push(renderMessage("user", pending));
    parts.push(`<div class="message assistant pending">…</div>`);
  }
  return `<div class="transcript">${parts.join("")}</div>`;
}

function renderStageRow(record: StageRecord, index: number): string {
  const tool = record.tool ? ` <span class="tool">${escapeHtml(record.tool)}</span>` : "";
  const flags = record.flags && record.flags.length
    ? ` <span class="flags">[${record.flags.map(escapeHtml).join(", ")}]</span>`
    : "";
  const output = record.raw_output ? escapeHtml(record.raw_output) : "";
  return (
    `<tr class="stage-row">` +
    `<td class="idx">${index + 1}</td>` +
    `<td class="stage">${escapeHtml(record.stage)}${tool}${flags}</td>` +
    `<td class="output">${output}</td>` +
    `</tr>`
  );
}

export function renderTrace(trace: TurnTrace): string {
  const rows = trace.stages.map(renderStageRow).join("");
  return (
    `<div class="trace" data-turn="${escapeHtml(trace.turn_id)}">` +
    `<table><tbody>${rows}</tbody></table>` +
    `<div class="totals">latency ${trace.latency.toFixed(3)}s · ` +
    `${trace.input_tokens}+${trace.output_tokens} tok · $${escapeHtml(trace.cost)}</div>` +
    `</div>`
  );
}

/** Number of stage rows a rendered trace contains. */
export function countStageRows(html: string): number {
  return (html.match(/class="stage-row"/g) ?? []).length;
}
