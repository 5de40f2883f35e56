/** What-if form, delta panel and lineage breadcrumb.
 *
 * Deltas come straight from the server's whatif_delta payload; the form
 * validates client-side before any request is sent.
 */

import type { RunRecord } from "../api.js";
import { escapeHtml, shortId, signedMoney } from "../format.js";
import type { WhatIfFormState } from "../state.js";

export function lineageBreadcrumb(chain: string[]): string {
  if (chain.length === 0) {
    return "";
  }
  const crumbs = chain
    .map((id, k) => `<span class="crumb${k === chain.length - 1 ? " current" : ""}">${shortId(id)}</span>`)
    .join(`<span class="crumb-sep">&gt;</span>`);
  return `<nav class="lineage">${crumbs}</nav>`;
}

export function deltaPanel(child: RunRecord | null): string {
  const delta = child?.result?.whatif_delta;
  if (!child || !delta) {
    return `<div class="delta-empty">no what-if result yet</div>`;
  }
  const cls = delta.npv >= 0 ? "delta-pos" : "delta-neg";
  return (
    `<dl class="delta-panel" data-run="${child.run_id}">` +
    `<dt>&Delta;NPV</dt><dd class="${cls}" data-delta-npv="${delta.npv}">${signedMoney(delta.npv)}</dd>` +
    `<dt>&Delta;P10</dt><dd>${signedMoney(delta.p10)}</dd>` +
    `<dt>&Delta;CVaR10</dt><dd>${signedMoney(delta.cvar10)}</dd>` +
    `</dl>`
  );
}

function field(name: string, label: string, value: unknown): string {
  const text = value === undefined || value === null ? "" : String(value);
  return (
    `<label>${label}` +
    `<input name="${name}" value="${escapeHtml(text)}" /></label>`
  );
}

export function whatIfForm(form: WhatIfFormState, parent: RunRecord | null): string {
  const disabled = !parent || parent.status !== "Done";
  const errors = form.errors.map((e) => `<li>${escapeHtml(e)}</li>`).join("");
  const serverError = form.serverError
    ? `<div class="form-server-error">${escapeHtml(form.serverError)}</div>`
    : "";
  const note = disabled
    ? `<div class="form-note">what-if needs a finished parent run</div>`
    : "";
  return (
    `<form class="whatif-form" data-parent="${form.parentId ?? ""}">` +
    note +
    field("price_scale", "price scale", form.overrides.price_scale) +
    field("capacity_scale", "capacity scale", form.overrides.capacity_scale) +
    field("n_scenarios", "scenarios", form.overrides.n_scenarios) +
    field("eps0", "eps0", form.overrides.eps0) +
    field("schedule", "schedule (linear|cosine)", form.overrides.schedule) +
    (errors ? `<ul class="form-errors">${errors}</ul>` : "") +
    serverError +
    `<button type="submit"${disabled ? " disabled" : ""}>run what-if</button>` +
    `</form>`
  );
}
