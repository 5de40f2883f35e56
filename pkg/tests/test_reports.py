import csv
import json
import math

import pytest

from pitplan.blockmodel import generate_synthetic
from pitplan.errors import InvalidArgs, MissingTrace
from pitplan.hybrid import epsilon_schedule
from pitplan.reports import KINDS, render_report
from pitplan.runstore import DONE, RUNNING, RunStore, RunWorker

FAST_HYBRID = {"population": 8, "t_max": 6, "g_max": 1, "neighborhoods": 2}


@pytest.fixture(scope="module")
def populated(tmp_path_factory):
    """A store holding one hybrid run, one dw run, and two SAA sweeps."""
    root = tmp_path_factory.mktemp("reports")
    store = RunStore(root / "store")
    inst = generate_synthetic(8, (2, 2, 2), 3, 1, seed=5, n_rock_types=1)
    instance_id = store.add_instance(inst.to_dict())
    worker = RunWorker(store)

    hybrid = store.create_run(instance_id, {"method": "hybrid", "seed": 7, "n_scenarios": 3,
                                            "hybrid": dict(FAST_HYBRID)})
    worker.execute(hybrid.run_id)
    dw = store.create_run(instance_id, {"method": "dw", "seed": 7, "n_scenarios": 3,
                                        "dw": {"max_iterations": 5, "initial_columns": 8}})
    worker.execute(dw.run_id)
    saa_runs = []
    for s_in in (2, 4):
        rec = store.create_run(instance_id, {
            "method": "saa", "seed": 11,
            "saa": {"s_in": s_in, "s_out": 6, "replications": 4, "optimizer": "exact"},
        })
        worker.execute(rec.run_id)
        saa_runs.append(rec.run_id)
    return store, hybrid.run_id, dw.run_id, saa_runs


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


class TestRenderReport:
    def test_unknown_kind(self, populated, tmp_path):
        store, hybrid_id, *_ = populated
        with pytest.raises(InvalidArgs):
            render_report(store, [hybrid_id], "pie_chart", tmp_path)

    def test_unfinished_run_rejected(self, populated, tmp_path):
        store, hybrid_id, *_ = populated
        rec = store.create_run(store.get_run(hybrid_id).instance_id, {"method": "exact"})
        with pytest.raises(MissingTrace):
            render_report(store, [rec.run_id], "trace", tmp_path)

    def test_output_naming(self, populated, tmp_path):
        store, hybrid_id, *_ = populated
        paths = render_report(store, [hybrid_id], "trace", tmp_path)
        assert paths[0].name == f"trace_{hybrid_id}.csv"
        assert paths[1].name == f"trace_{hybrid_id}.svg"
        assert paths[0].exists() and paths[1].exists()

    def test_trace_csv_matches_store(self, populated, tmp_path):
        store, hybrid_id, *_ = populated
        csv_path, _ = render_report(store, [hybrid_id], "trace", tmp_path)
        rows = read_csv(csv_path)
        stored = store.read_trace(hybrid_id)
        assert len(rows) == len(stored) + 1
        assert rows[0] == list(stored[0].keys())

    def test_epsilon_equals_closed_form(self, populated, tmp_path):
        store, hybrid_id, *_ = populated
        csv_path, _ = render_report(store, [hybrid_id], "epsilon", tmp_path)
        rows = read_csv(csv_path)[1:]
        t_max = FAST_HYBRID["t_max"]
        assert len(rows) == t_max + 1
        for it, eps in rows:
            assert float(eps) == pytest.approx(epsilon_schedule(int(it), t_max, 2.0, "linear"))

    def test_bias_vs_sin_recomputed_from_replications(self, populated, tmp_path):
        store, _, _, saa_runs = populated
        csv_path, _ = render_report(store, saa_runs, "bias_vs_sin", tmp_path)
        rows = read_csv(csv_path)[1:]
        assert [int(float(r[0])) for r in rows] == [2, 4]
        for row in rows:
            s_in, mean_bias, half = float(row[0]), float(row[1]), float(row[2])
            run_id = next(r for r in saa_runs
                          if store.read_result(r)["config"]["s_in"] == int(s_in))
            reps = [r for r in store.read_result(run_id)["per_replication"] if r["status"] == "ok"]
            biases = [r["bias"] for r in reps]
            mean = sum(biases) / len(biases)
            var = sum((b - mean) ** 2 for b in biases) / (len(biases) - 1)
            assert mean_bias == pytest.approx(mean)
            assert half == pytest.approx(1.96 * math.sqrt(var / len(biases)))

    def test_saa_stability_and_runtime(self, populated, tmp_path):
        store, _, _, saa_runs = populated
        stab_csv, _ = render_report(store, saa_runs, "saa_stability", tmp_path)
        rows = read_csv(stab_csv)[1:]
        assert len(rows) == 2
        rt_csv, _ = render_report(store, saa_runs, "runtime_vs_sin", tmp_path)
        rt_rows = read_csv(rt_csv)[1:]
        assert all(float(r[1]) >= 0 for r in rt_rows)

    def test_box_compare_shape(self, populated, tmp_path):
        store, hybrid_id, dw_id, _ = populated
        csv_path, _ = render_report(store, [hybrid_id, dw_id], "box_compare", tmp_path)
        rows = read_csv(csv_path)[1:]
        assert len(rows) == 2
        assert {r[0] for r in rows} == {"hybrid", "dw"}

    def test_throughput(self, populated, tmp_path):
        store, hybrid_id, *_ = populated
        csv_path, _ = render_report(store, [hybrid_id], "throughput", tmp_path)
        rows = read_csv(csv_path)[1:]
        assert len(rows) == 1 and float(rows[0][3]) >= 0

    def test_byte_identical_re_render(self, populated, tmp_path):
        store, hybrid_id, dw_id, saa_runs = populated
        for kind, ids in [("trace", [hybrid_id]), ("epsilon", [hybrid_id]),
                          ("bias_vs_sin", saa_runs), ("box_compare", [hybrid_id, dw_id])]:
            first = render_report(store, ids, kind, tmp_path / "a")
            second = render_report(store, ids, kind, tmp_path / "b")
            for p1, p2 in zip(first, second):
                assert p1.read_bytes() == p2.read_bytes(), f"{kind}: {p1.name}"

    def test_dw_trace_render(self, populated, tmp_path):
        store, _, dw_id, _ = populated
        csv_path, svg_path = render_report(store, [dw_id], "trace", tmp_path)
        rows = read_csv(csv_path)
        assert rows[0][1] == "master_lp_value"
        assert svg_path.stat().st_size > 0

    def test_all_kinds_enumerated(self):
        assert set(KINDS) == {
            "bias_vs_sin", "runtime_vs_sin", "saa_stability", "trace",
            "epsilon", "box_compare", "throughput",
        }
