/** View state and the pure reducers that advance it.
 *
 * The view always reflects server-confirmed state; optimistic updates
 * are rolled back by re-applying the last confirmed snapshot.
 */

import type { RunRecord, TraceRow, WhatIfOverrides } from "./api.js";

export interface TraceSeries {
  cursor: number;
  iters: number[];
  bestNpv: number[];
  violation: number[];
  eps: number[];
  temperature: number[];
}

export interface WhatIfFormState {
  parentId: string | null;
  overrides: WhatIfOverrides;
  errors: string[];
  serverError: string | null;
}

export interface ViewState {
  instances: string[];
  runs: RunRecord[];
  selectedRunId: string | null;
  trace: TraceSeries;
  comparison: string[]; // run ids in the risk tray
  whatIf: WhatIfFormState;
  lineage: string[]; // run ids from root to the selected run
  banner: string | null;
}

export function emptyTrace(): TraceSeries {
  return { cursor: -1, iters: [], bestNpv: [], violation: [], eps: [], temperature: [] };
}

export function initialState(): ViewState {
  return {
    instances: [],
    runs: [],
    selectedRunId: null,
    trace: emptyTrace(),
    comparison: [],
    whatIf: { parentId: null, overrides: {}, errors: [], serverError: null },
    lineage: [],
    banner: null,
  };
}

/** Append a trace page; rows at or below the cursor are ignored so polls
 * are idempotent and the x axis stays strictly increasing. */
export function appendTrace(trace: TraceSeries, rows: TraceRow[], next: number): TraceSeries {
  const out: TraceSeries = {
    cursor: trace.cursor,
    iters: [...trace.iters],
    bestNpv: [...trace.bestNpv],
    violation: [...trace.violation],
    eps: [...trace.eps],
    temperature: [...trace.temperature],
  };
  for (const row of rows) {
    const iter = Number(row.iter);
    if (!Number.isFinite(iter) || iter <= out.cursor) {
      continue;
    }
    out.iters.push(iter);
    out.bestNpv.push(Number(row.best_npv ?? row.master_lp_value ?? "NaN"));
    out.violation.push(Number(row.violation ?? "0"));
    out.eps.push(Number(row.eps ?? "0"));
    out.temperature.push(Number(row.temperature ?? "0"));
    out.cursor = iter;
  }
  if (next > out.cursor) {
    out.cursor = next;
  }
  return out;
}

/** Client-side what-if validation; mirrors the server's bounds. */
export function validateOverrides(overrides: WhatIfOverrides): string[] {
  const errors: string[] = [];
  if (overrides.price_scale !== undefined && !(overrides.price_scale > 0)) {
    errors.push("price scale must be > 0");
  }
  if (overrides.capacity_scale !== undefined && !(overrides.capacity_scale > 0)) {
    errors.push("capacity scale must be > 0");
  }
  if (
    overrides.n_scenarios !== undefined &&
    !(Number.isInteger(overrides.n_scenarios) && overrides.n_scenarios >= 1 && overrides.n_scenarios <= 1000)
  ) {
    errors.push("scenario count must be an integer in [1, 1000]");
  }
  if (overrides.eps0 !== undefined && !(overrides.eps0 >= 0)) {
    errors.push("eps0 must be >= 0");
  }
  if (overrides.schedule !== undefined && !["linear", "cosine"].includes(overrides.schedule)) {
    errors.push("schedule must be linear or cosine");
  }
  return errors;
}

/** Root-to-leaf chain of run ids for the lineage breadcrumb. */
export function lineageOf(runs: RunRecord[], runId: string | null): string[] {
  if (!runId) {
    return [];
  }
  const byId = new Map(runs.map((r) => [r.run_id, r]));
  const chain: string[] = [];
  let cursor: string | null = runId;
  while (cursor && byId.has(cursor) && chain.length <= runs.length) {
    chain.unshift(cursor);
    cursor = byId.get(cursor)!.parent_id;
  }
  return chain;
}
