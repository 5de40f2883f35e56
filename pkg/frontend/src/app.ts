/** Page assembly: compose every view from the current state. */

import { escapeHtml } from "./format.js";
import type { ViewState } from "./state.js";
import { comparisonTray } from "./views/compare.js";
import { runDetail } from "./views/detail.js";
import { instanceList } from "./views/instances.js";
import { runTable } from "./views/runs.js";
import { deltaPanel, lineageBreadcrumb, whatIfForm } from "./views/whatif.js";

export function renderApp(state: ViewState, nPeriods = 3): string {
  const selected = state.runs.find((r) => r.run_id === state.selectedRunId) ?? null;
  const whatIfChild =
    state.runs.find((r) => r.parent_id === state.selectedRunId && r.status === "Done") ?? null;
  const banner = state.banner
    ? `<div class="banner" role="alert">${escapeHtml(state.banner)}</div>`
    : "";
  return (
    `<main class="planner">` +
    banner +
    `<section class="col instances"><h2>instances</h2>${instanceList(state.instances)}</section>` +
    `<section class="col runs"><h2>runs</h2>${runTable(state.runs, state.selectedRunId)}</section>` +
    `<section class="col detail">` +
    lineageBreadcrumb(state.lineage) +
    runDetail(selected, state.trace, nPeriods) +
    `<h2>what-if</h2>` +
    whatIfForm(state.whatIf, selected) +
    deltaPanel(whatIfChild) +
    `</section>` +
    `<section class="col compare"><h2>risk comparison</h2>` +
    comparisonTray(state.runs.filter((r) => state.comparison.includes(r.run_id))) +
    `</section>` +
    `</main>`
  );
}
