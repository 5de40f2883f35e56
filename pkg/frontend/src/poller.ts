/** Cursor-based trace polling.
 *
 * One in-flight poll per run; the cursor only moves forward, so a poll
 * that returns no new rows leaves the chart untouched.
 */

import { ApiClient, ApiError } from "./api.js";
import { TraceSeries, appendTrace, emptyTrace } from "./state.js";

export interface PollOutcome {
  trace: TraceSeries;
  grew: boolean;
  banner: string | null;
}

export class TracePoller {
  private trace: TraceSeries = emptyTrace();
  private inFlight = false;

  constructor(private client: ApiClient, private runId: string) {}

  get series(): TraceSeries {
    return this.trace;
  }

  async poll(): Promise<PollOutcome> {
    if (this.inFlight) {
      return { trace: this.trace, grew: false, banner: null };
    }
    this.inFlight = true;
    try {
      const page = await this.client.getTrace(this.runId, this.trace.cursor);
      const before = this.trace.iters.length;
      this.trace = appendTrace(this.trace, page.rows, page.next);
      return { trace: this.trace, grew: this.trace.iters.length > before, banner: null };
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        return { trace: this.trace, grew: false, banner: "run not found" };
      }
      throw err;
    } finally {
      this.inFlight = false;
    }
  }
}
