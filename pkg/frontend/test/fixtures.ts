/** Recorded service payloads: every view renders from these offline. */

import type { RunRecord, TraceRow } from "../src/api.js";

export const INSTANCES = ["87bb9a8a1e47", "a3f09c11d2e4"];

export const DONE_RUN: RunRecord = {
  run_id: "1111aaaa2222bbbb",
  instance_id: "87bb9a8a1e47",
  status: "Done",
  config: { method: "hybrid", seed: 7, n_scenarios: 3 },
  parent_id: null,
  error: null,
  result: {
    kind: "optimize",
    method: "hybrid",
    npv: 35371.01,
    schedule: [1, 0, 0, 0, 1, 2, -1, 2],
    schedule_digest: "b497bcab165458ca",
    risk: { p10: 27303.2, p50: 39909.8, p90: 41623.3, cvar10: 24151.6, mean: 36278.8, sd: 7921.4 },
    iterations: 5,
  },
};

export const RUNNING_RUN: RunRecord = {
  run_id: "3333cccc4444dddd",
  instance_id: "87bb9a8a1e47",
  status: "Running",
  config: { method: "dw", seed: 9, n_scenarios: 4 },
  parent_id: null,
  error: null,
};

export const PAUSED_RUN: RunRecord = {
  run_id: "5555eeee6666ffff",
  instance_id: "87bb9a8a1e47",
  status: "Paused",
  config: { method: "hybrid", seed: 2, n_scenarios: 4 },
  parent_id: null,
  error: null,
};

export const FAILED_RUN: RunRecord = {
  run_id: "7777000088881111",
  instance_id: "a3f09c11d2e4",
  status: "Failed",
  config: { method: "exact", seed: 3, n_scenarios: 2 },
  parent_id: null,
  error: "Cancelled",
};

export const WHATIF_CHILD: RunRecord = {
  run_id: "9999222200003333",
  instance_id: "87bb9a8a1e47",
  status: "Done",
  config: { method: "hybrid", seed: 7, n_scenarios: 3, price_scale: 1.1 },
  parent_id: DONE_RUN.run_id,
  error: null,
  result: {
    kind: "optimize",
    method: "hybrid",
    npv: 40382.5,
    schedule: [1, 0, 0, 0, 1, 2, -1, 2],
    schedule_digest: "c2aa01f4d67e19bb",
    risk: { p10: 30984.1, p50: 44120.6, p90: 46881.0, cvar10: 27419.9, mean: 40881.2, sd: 8412.3 },
    whatif_delta: { npv: 5011.49, p10: 3680.9, cvar10: 3268.3 },
    iterations: 5,
  },
};

export const ALL_RUNS: RunRecord[] = [DONE_RUN, RUNNING_RUN, PAUSED_RUN, FAILED_RUN, WHATIF_CHILD];

export const TRACE_PAGE_1: TraceRow[] = [
  { iter: "0", best_fitness: "31000.5", best_npv: "31000.5", violation: "0.4", eps: "2.0", temperature: "1847.0", accepted: "1", operator: "balanced" },
  { iter: "1", best_fitness: "33120.8", best_npv: "33120.8", violation: "0.1", eps: "1.6", temperature: "1754.6", accepted: "0", operator: "balanced" },
  { iter: "2", best_fitness: "34480.2", best_npv: "34480.2", violation: "0.0", eps: "1.2", temperature: "1666.9", accepted: "1", operator: "balanced" },
];

export const TRACE_PAGE_2: TraceRow[] = [
  { iter: "3", best_fitness: "35371.0", best_npv: "35371.0", violation: "0.0", eps: "0.8", temperature: "1583.5", accepted: "0", operator: "balanced" },
  { iter: "4", best_fitness: "35371.0", best_npv: "35371.0", violation: "0.0", eps: "0.4", temperature: "1504.4", accepted: "0", operator: "balanced" },
];

export const DW_TRACE: TraceRow[] = [
  { iter: "0", master_lp_value: "26707.4", min_reduced_cost: "11590.5", pool_size: "8", n_scenarios_valid: "6" },
  { iter: "1", master_lp_value: "27555.1", min_reduced_cost: "0.0", pool_size: "9", n_scenarios_valid: "6" },
];
