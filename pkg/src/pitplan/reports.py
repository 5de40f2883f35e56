"""Paper-analogue report rendering from run records.

Each kind writes `{kind}_{runid}.csv` (the contract) and a matching
`.svg` figure rendered with matplotlib. Output is byte-reproducible:
the SVG hash salt is pinned and no timestamps are embedded.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import InvalidArgs, MissingTrace  # noqa: E402
from .hybrid import epsilon_schedule  # noqa: E402
from .runstore import DONE, RunStore  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "pitplan"

KINDS = (
    "bias_vs_sin",
    "runtime_vs_sin",
    "saa_stability",
    "trace",
    "epsilon",
    "box_compare",
    "throughput",
)

_SVG_META = {"Date": None}


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def _require_done(store: RunStore, run_ids: list[str]) -> list:
    records = [store.get_run(r) for r in run_ids]
    for rec in records:
        if rec.status != DONE:
            raise MissingTrace(f"run {rec.run_id} is {rec.status}, not Done")
    return records


def _saa_rows(store: RunStore, run_ids: list[str], value_key: str) -> list[list]:
    rows = []
    for run_id in run_ids:
        result = store.read_result(run_id)
        if result.get("kind") != "saa":
            raise InvalidArgs(f"run {run_id} is not an SAA run")
        s_in = result["config"]["s_in"]
        agg = result["aggregate"]
        if value_key == "bias":
            rows.append([s_in, agg["bias_mean"], agg["bias_ci_half_width"]])
        else:
            import math

            reps = [r for r in result["per_replication"] if r["status"] == "ok"]
            vals = [r["npv_out"] for r in reps]
            mean = sum(vals) / len(vals)
            if len(vals) > 1:
                var = sum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
                half = 1.96 * math.sqrt(var / len(vals))
            else:
                half = 0.0
            rows.append([s_in, mean, half])
    rows.sort(key=lambda r: r[0])
    return rows


def render_report(store: RunStore, run_ids: list[str], kind: str, out_dir) -> list[Path]:
    """Write the CSV and SVG for one report kind; returns the paths."""
    if kind not in KINDS:
        raise InvalidArgs(f"unknown report kind {kind!r}; choose from {KINDS}")
    if not run_ids:
        raise InvalidArgs("need at least one run id")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _require_done(store, run_ids)
    stem = f"{kind}_{run_ids[0]}"
    csv_path = out / f"{stem}.csv"
    svg_path = out / f"{stem}.svg"

    if kind == "bias_vs_sin":
        rows = _saa_rows(store, run_ids, "bias")
        _write_csv(csv_path, ["s_in", "mean_bias", "ci_half_width"], rows)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.errorbar(
            [r[0] for r in rows], [r[1] for r in rows], yerr=[r[2] for r in rows],
            marker="o", capsize=3,
        )
        ax.set_xlabel("in-sample scenarios $S_{in}$")
        ax.set_ylabel("mean bias (NPV$_{in}$ - NPV$_{out}$)")
        ax.set_title("In-sample optimism vs scenario count")
        fig.tight_layout()
        _save(fig, svg_path)

    elif kind == "runtime_vs_sin":
        rows = []
        for run_id in run_ids:
            result = store.read_result(run_id)
            if result.get("kind") != "saa":
                raise InvalidArgs(f"run {run_id} is not an SAA run")
            timing = store.read_timing(run_id)
            reps = timing.get("per_replication", [])
            mean_rt = sum(reps) / len(reps) if reps else timing.get("elapsed_seconds", 0.0)
            rows.append([result["config"]["s_in"], float(mean_rt)])
        rows.sort(key=lambda r: r[0])
        _write_csv(csv_path, ["s_in", "mean_runtime_seconds"], rows)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot([r[0] for r in rows], [r[1] for r in rows], marker="s")
        ax.set_xlabel("in-sample scenarios $S_{in}$")
        ax.set_ylabel("mean runtime per replication (s)")
        ax.set_title("Runtime vs scenario count")
        fig.tight_layout()
        _save(fig, svg_path)

    elif kind == "saa_stability":
        rows = _saa_rows(store, run_ids, "npv_out")
        _write_csv(csv_path, ["s_in", "mean_npv_out", "ci_half_width"], rows)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.errorbar(
            [r[0] for r in rows], [r[1] for r in rows], yerr=[r[2] for r in rows],
            marker="o", capsize=3,
        )
        ax.set_xlabel("in-sample scenarios $S_{in}$")
        ax.set_ylabel("out-of-sample NPV (mean $\\pm$ 95% CI)")
        ax.set_title("SAA stability")
        fig.tight_layout()
        _save(fig, svg_path)

    elif kind == "trace":
        run_id = run_ids[0]
        rows_dicts = store.read_trace(run_id)
        if not rows_dicts:
            raise MissingTrace(f"run {run_id} has no trace")
        header = list(rows_dicts[0].keys())
        _write_csv(csv_path, header, [[row[h] for h in header] for row in rows_dicts])
        fig, ax = plt.subplots(figsize=(6, 3.5))
        iters = [int(r["iter"]) for r in rows_dicts]
        value_col = "best_npv" if "best_npv" in header else "master_lp_value"
        ax.plot(iters, [float(r[value_col]) for r in rows_dicts], label=value_col)
        if "violation" in header:
            ax2 = ax.twinx()
            ax2.plot(iters, [float(r["violation"]) for r in rows_dicts], color="tab:red",
                     alpha=0.6, label="violation")
            ax2.set_ylabel("violation")
        ax.set_xlabel("iteration")
        ax.set_ylabel(value_col)
        ax.set_title("Search trajectory")
        fig.tight_layout()
        _save(fig, svg_path)

    elif kind == "epsilon":
        run_id = run_ids[0]
        record = store.get_run(run_id)
        config = record.config
        from .runstore import hybrid_config_for  # local import: avoids cycle at module load

        hybrid_cfg = hybrid_config_for(config)
        rows = [
            [t, epsilon_schedule(t, hybrid_cfg.t_max, hybrid_cfg.eps0, hybrid_cfg.eps_kind)]
            for t in range(hybrid_cfg.t_max + 1)
        ]
        _write_csv(csv_path, ["iter", "eps"], rows)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot([r[0] for r in rows], [r[1] for r in rows])
        ax.set_xlabel("iteration")
        ax.set_ylabel("$\\epsilon$ tolerance")
        ax.set_title(f"{hybrid_cfg.eps_kind} constraint relaxation schedule")
        fig.tight_layout()
        _save(fig, svg_path)

    elif kind == "box_compare":
        rows = []
        for run_id in run_ids:
            result = store.read_result(run_id)
            record = store.get_run(run_id)
            method = result.get("method", record.config.get("method", "?"))
            npv = result.get("npv")
            if npv is None:
                raise InvalidArgs(f"run {run_id} has no NPV (kind {result.get('kind')})")
            rows.append([method, run_id, float(npv)])
        _write_csv(csv_path, ["method", "run_id", "npv"], rows)
        methods = sorted({r[0] for r in rows})
        data = [[r[2] for r in rows if r[0] == m] for m in methods]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.boxplot(data, tick_labels=methods, showmeans=True)
        ax.set_ylabel("NPV")
        ax.set_title("Method comparison")
        fig.tight_layout()
        _save(fig, svg_path)

    elif kind == "throughput":
        rows = []
        for run_id in run_ids:
            timing = store.read_timing(run_id)
            evals = timing.get("evaluations", 0)
            elapsed = timing.get("elapsed_seconds", 0.0)
            rate = evals / elapsed if elapsed > 0 else 0.0
            rows.append([run_id, evals, float(elapsed), float(rate)])
        _write_csv(csv_path, ["run_id", "evaluations", "elapsed_seconds", "evals_per_second"], rows)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.bar(range(len(rows)), [r[3] for r in rows])
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels([r[0][:6] for r in rows], rotation=45, ha="right")
        ax.set_ylabel("stage-2 evaluations / second")
        ax.set_title("Evaluation throughput")
        fig.tight_layout()
        _save(fig, svg_path)

    return [csv_path, svg_path]
