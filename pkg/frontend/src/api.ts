/** Typed client over the pitplan service HTTP API.
 *
 * The console performs no optimization math: every number it renders
 * comes from these endpoints.
 */

export interface RiskMetrics {
  p10: number;
  p50: number;
  p90: number;
  cvar10: number;
  mean: number;
  sd: number;
}

export interface WhatIfDelta {
  npv: number;
  p10: number;
  cvar10: number;
}

export interface RunResult {
  kind: string;
  method?: string;
  npv?: number;
  schedule?: number[];
  schedule_digest?: string;
  risk?: RiskMetrics;
  whatif_delta?: WhatIfDelta;
  iterations?: number;
}

export type RunStatus = "Queued" | "Running" | "Paused" | "Done" | "Failed";

export interface RunRecord {
  run_id: string;
  instance_id: string;
  status: RunStatus;
  config: Record<string, unknown>;
  parent_id: string | null;
  error: string | null;
  result?: RunResult;
}

export interface TraceRow {
  iter: string;
  [series: string]: string;
}

export interface TracePage {
  rows: TraceRow[];
  next: number;
}

export interface WhatIfOverrides {
  price_scale?: number;
  capacity_scale?: number;
  n_scenarios?: number;
  eps0?: number;
  schedule?: "linear" | "cosine";
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function request<T>(base: string, path: string, init?: RequestInit): Promise<T> {
  const response = await fetch(base + path, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  const body = await response.json().catch(() => ({}));
  if (!response.ok) {
    throw new ApiError(response.status, (body as { error?: string }).error ?? response.statusText);
  }
  return body as T;
}

export class ApiClient {
  constructor(private base: string) {}

  listInstances(): Promise<{ instances: string[] }> {
    return request(this.base, "/instances");
  }

  uploadInstance(doc: unknown): Promise<{ instance_id: string }> {
    return request(this.base, "/instances", { method: "POST", body: JSON.stringify(doc) });
  }

  listRuns(): Promise<{ runs: RunRecord[] }> {
    return request(this.base, "/runs");
  }

  getRun(runId: string): Promise<RunRecord> {
    return request(this.base, `/runs/${runId}`);
  }

  createRun(instanceId: string, config: Record<string, unknown>): Promise<RunRecord> {
    return request(this.base, "/runs", {
      method: "POST",
      body: JSON.stringify({ instance_id: instanceId, config }),
    });
  }

  getTrace(runId: string, fromCursor: number): Promise<TracePage> {
    return request(this.base, `/runs/${runId}/trace?from=${fromCursor}`);
  }

  getRisk(runId: string): Promise<{ risk: RiskMetrics; whatif_delta?: WhatIfDelta }> {
    return request(this.base, `/runs/${runId}/risk`);
  }

  control(runId: string, command: "pause" | "resume" | "cancel"): Promise<{ status: string }> {
    return request(this.base, `/runs/${runId}/control`, {
      method: "POST",
      body: JSON.stringify({ command }),
    });
  }

  whatIf(parentId: string, overrides: WhatIfOverrides): Promise<RunRecord> {
    return request(this.base, `/runs/${parentId}/whatif`, {
      method: "POST",
      body: JSON.stringify({ overrides }),
    });
  }
}
