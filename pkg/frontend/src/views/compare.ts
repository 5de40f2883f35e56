/** Side-by-side risk comparison tray. */

import type { RunRecord } from "../api.js";
import { escapeHtml, money, shortId } from "../format.js";

const METRICS: Array<[string, (r: RunRecord) => number | undefined]> = [
  ["NPV", (r) => r.result?.npv],
  ["P10", (r) => r.result?.risk?.p10],
  ["P50", (r) => r.result?.risk?.p50],
  ["P90", (r) => r.result?.risk?.p90],
  ["CVaR10", (r) => r.result?.risk?.cvar10],
];

export function comparisonTray(records: RunRecord[]): string {
  if (records.length === 0) {
    return `<div class="tray-empty">add finished runs to compare risk</div>`;
  }
  const header = records
    .map((r) => `<th>${shortId(r.run_id)}<br/><small>${escapeHtml(String(r.config["method"] ?? ""))}</small></th>`)
    .join("");
  const body = METRICS.map(([label, pick]) => {
    const cells = records.map((r) => `<td class="num">${money(pick(r))}</td>`).join("");
    return `<tr><th>${label}</th>${cells}</tr>`;
  }).join("");
  return (
    `<table class="compare-tray">` +
    `<thead><tr><th></th>${header}</tr></thead>` +
    `<tbody>${body}</tbody></table>`
  );
}
