/** Run table with live status badges. */

import type { RunRecord } from "../api.js";
import { escapeHtml, money, shortId } from "../format.js";

const BADGE_CLASS: Record<string, string> = {
  Queued: "badge badge-queued",
  Running: "badge badge-running",
  Paused: "badge badge-paused",
  Done: "badge badge-done",
  Failed: "badge badge-failed",
};

export function statusBadge(status: string): string {
  const cls = BADGE_CLASS[status] ?? "badge";
  return `<span class="${cls}" data-status="${escapeHtml(status)}">${escapeHtml(status)}</span>`;
}

export function runTable(runs: RunRecord[], selectedRunId: string | null): string {
  const rows = runs
    .map((run) => {
      const method = String(run.config["method"] ?? "?");
      const npv = run.result?.npv;
      const selected = run.run_id === selectedRunId ? " class=\"selected\"" : "";
      return (
        `<tr data-run="${run.run_id}"${selected}>` +
        `<td class="mono">${shortId(run.run_id)}</td>` +
        `<td>${escapeHtml(method)}</td>` +
        `<td>${statusBadge(run.status)}</td>` +
        `<td class="num">${money(npv)}</td>` +
        `<td>${run.parent_id ? shortId(run.parent_id) : ""}</td>` +
        `</tr>`
      );
    })
    .join("");
  return (
    `<table class="run-table">` +
    `<thead><tr><th>run</th><th>method</th><th>status</th><th>NPV</th><th>parent</th></tr></thead>` +
    `<tbody>${rows}</tbody></table>`
  );
}
