/** Selected-run detail: trace chart with overlays and the schedule heatmap.
 *
 * The chart is a plain inline SVG built from the polled series; nothing
 * is recomputed client-side beyond axis scaling.
 */

import type { RunRecord } from "../api.js";
import { escapeHtml } from "../format.js";
import type { TraceSeries } from "../state.js";

const WIDTH = 540;
const HEIGHT = 220;
const PAD = 28;

function polyline(xs: number[], ys: number[], color: string, yLo: number, yHi: number): string {
  if (xs.length === 0) {
    return "";
  }
  const xLo = xs[0];
  const xHi = xs[xs.length - 1] || 1;
  const span = yHi - yLo || 1;
  const points = xs
    .map((x, k) => {
      const px = PAD + ((x - xLo) / Math.max(xHi - xLo, 1)) * (WIDTH - 2 * PAD);
      const py = HEIGHT - PAD - ((ys[k] - yLo) / span) * (HEIGHT - 2 * PAD);
      return `${px.toFixed(1)},${py.toFixed(1)}`;
    })
    .join(" ");
  return `<polyline fill="none" stroke="${color}" stroke-width="1.5" points="${points}" />`;
}

function normalized(values: number[]): number[] {
  const finite = values.filter(Number.isFinite);
  if (finite.length === 0) {
    return values.map(() => 0);
  }
  const lo = Math.min(...finite);
  const hi = Math.max(...finite);
  const span = hi - lo || 1;
  return values.map((v) => (v - lo) / span);
}

export function traceChart(trace: TraceSeries): string {
  if (trace.iters.length === 0) {
    return `<div class="chart-empty">no trace rows yet</div>`;
  }
  const npvFinite = trace.bestNpv.filter(Number.isFinite);
  const yLo = Math.min(...npvFinite);
  const yHi = Math.max(...npvFinite);
  const overlays =
    polyline(trace.iters, normalized(trace.eps), "#c2410c", 0, 1) +
    polyline(trace.iters, normalized(trace.temperature), "#7c3aed", 0, 1) +
    polyline(trace.iters, normalized(trace.violation), "#dc2626", 0, 1);
  return (
    `<svg class="trace-chart" viewBox="0 0 ${WIDTH} ${HEIGHT}" role="img" ` +
    `aria-label="optimization trace">` +
    `<rect x="0" y="0" width="${WIDTH}" height="${HEIGHT}" fill="#fafafa" />` +
    polyline(trace.iters, trace.bestNpv, "#1d4ed8", yLo, yHi) +
    overlays +
    `<text x="${PAD}" y="14" class="chart-label">best NPV (blue), eps (orange), ` +
    `temperature (violet), violation (red; overlays normalized)</text>` +
    `</svg>`
  );
}

/** Period color ramp from early (light) to late (dark); unmined neutral. */
export function periodColor(period: number, nPeriods: number): string {
  if (period < 0) {
    return "#d4d4d4";
  }
  const stop = nPeriods > 1 ? period / (nPeriods - 1) : 0;
  const hue = 210;
  const light = 78 - stop * 48;
  return `hsl(${hue}, 70%, ${light.toFixed(0)}%)`;
}

export function scheduleHeatmap(schedule: number[], nPeriods: number, columns = 8): string {
  const cells = schedule
    .map((period, block) => {
      const color = periodColor(period, nPeriods);
      const label = period < 0 ? "unmined" : `period ${period}`;
      return (
        `<div class="cell" data-block="${block}" data-period="${period}" ` +
        `style="background:${color}" title="block ${block}: ${label}"></div>`
      );
    })
    .join("");
  return `<div class="heatmap" style="grid-template-columns: repeat(${columns}, 18px)">${cells}</div>`;
}

export function runDetail(record: RunRecord | null, trace: TraceSeries, nPeriods: number): string {
  if (!record) {
    return `<div class="detail-empty">select a run</div>`;
  }
  const schedule = record.result?.schedule;
  const heatmap = schedule
    ? scheduleHeatmap(schedule, nPeriods)
    : `<div class="heatmap-pending">schedule available when the run finishes</div>`;
  const error = record.error ? `<div class="run-error">${escapeHtml(record.error)}</div>` : "";
  return (
    `<section class="run-detail" data-run="${record.run_id}">` +
    `<h3>run ${record.run_id}</h3>` +
    error +
    traceChart(trace) +
    heatmap +
    `</section>`
  );
}
