/** Browser bootstrap: poll the service and re-render into #app.
 *
 * One in-flight trace poll per selected run; form submissions are
 * serialized per parent run by disabling the button while pending.
 */

import { ApiClient, ApiError } from "./api.js";
import { renderApp } from "./app.js";
import { TracePoller } from "./poller.js";
import { ViewState, initialState, emptyTrace, lineageOf, validateOverrides } from "./state.js";

const POLL_MS = 1000;

export function startApp(root: HTMLElement, base = ""): () => void {
  const client = new ApiClient(base);
  let state: ViewState = initialState();
  let poller: TracePoller | null = null;
  let submitting = false;

  function render(): void {
    root.innerHTML = renderApp(state);
    wire();
  }

  function wire(): void {
    root.querySelectorAll<HTMLTableRowElement>(".run-table tbody tr").forEach((row) => {
      row.addEventListener("click", () => {
        const runId = row.dataset.run ?? null;
        state = {
          ...state,
          selectedRunId: runId,
          trace: emptyTrace(),
          lineage: lineageOf(state.runs, runId),
          whatIf: { ...state.whatIf, parentId: runId, errors: [], serverError: null },
        };
        poller = runId ? new TracePoller(client, runId) : null;
        render();
      });
    });
    const form = root.querySelector<HTMLFormElement>(".whatif-form");
    form?.addEventListener("submit", (event) => {
      event.preventDefault();
      void submitWhatIf(form);
    });
  }

  async function submitWhatIf(form: HTMLFormElement): Promise<void> {
    if (submitting || !state.selectedRunId) {
      return;
    }
    const data = new FormData(form);
    const overrides: Record<string, unknown> = {};
    for (const key of ["price_scale", "capacity_scale", "eps0"]) {
      const raw = String(data.get(key) ?? "").trim();
      if (raw) {
        overrides[key] = Number(raw);
      }
    }
    const scen = String(data.get("n_scenarios") ?? "").trim();
    if (scen) {
      overrides["n_scenarios"] = Number(scen);
    }
    const schedule = String(data.get("schedule") ?? "").trim();
    if (schedule) {
      overrides["schedule"] = schedule;
    }
    const errors = validateOverrides(overrides);
    if (errors.length > 0) {
      state = { ...state, whatIf: { ...state.whatIf, errors, serverError: null } };
      render();
      return;
    }
    submitting = true;
    try {
      await client.whatIf(state.selectedRunId, overrides);
      state = { ...state, whatIf: { ...state.whatIf, errors: [], serverError: null } };
    } catch (err) {
      const message = err instanceof ApiError ? err.message : String(err);
      state = { ...state, whatIf: { ...state.whatIf, serverError: message } };
    } finally {
      submitting = false;
      render();
    }
  }

  async function tick(): Promise<void> {
    try {
      const [instances, runs] = await Promise.all([client.listInstances(), client.listRuns()]);
      state = {
        ...state,
        instances: instances.instances,
        runs: runs.runs,
        lineage: lineageOf(runs.runs, state.selectedRunId),
        banner: null,
      };
      if (poller) {
        const outcome = await poller.poll();
        state = { ...state, trace: outcome.trace, banner: outcome.banner };
      }
    } catch (err) {
      state = { ...state, banner: err instanceof Error ? err.message : String(err) };
    }
    render();
  }

  void tick();
  const timer = setInterval(() => void tick(), POLL_MS);
  return () => clearInterval(timer);
}

declare global {
  interface Window {
    pitplanStart?: typeof startApp;
  }
}

if (typeof window !== "undefined") {
  window.pitplanStart = startApp;
  const root = document.getElementById("app");
  if (root) {
    startApp(root);
  }
}
