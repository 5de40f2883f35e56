import json

import pytest

from pitplan.cli import main


@pytest.fixture
def instance_path(tmp_path):
    path = tmp_path / "inst.json"
    rc = main([
        "generate", "--blocks", "8", "--grid", "2,2,2", "--periods", "3",
        "--modes", "1", "--rock-types", "1", "--seed", "5", "-o", str(path),
    ])
    assert rc == 0
    return path


class TestGenerate:
    def test_writes_valid_instance(self, instance_path):
        from pitplan.blockmodel import load_instance

        inst = load_instance(instance_path)
        assert inst.n_blocks == 8 and inst.n_periods == 3

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for path in (a, b):
            main(["generate", "--blocks", "8", "--grid", "2,2,2", "--periods", "2",
                  "--seed", "9", "-o", str(path)])
        assert a.read_bytes() == b.read_bytes()


class TestOptimize:
    def test_hybrid_run(self, instance_path, tmp_path, capsys):
        store = tmp_path / "store"
        rc = main(["optimize", "--instance", str(instance_path), "--method", "hybrid",
                   "--scenarios", "3", "--seed", "7", "--store", str(store)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "Done" in out and "npv" in out

    def test_exact_run(self, instance_path, tmp_path, capsys):
        store = tmp_path / "store"
        rc = main(["optimize", "--instance", str(instance_path), "--method", "exact",
                   "--scenarios", "2", "--seed", "1", "--store", str(store)])
        assert rc == 0


class TestSaaAndReport:
    def test_saa_then_figures(self, instance_path, tmp_path, capsys):
        store = tmp_path / "store"
        rc = main(["saa", "--instance", str(instance_path), "--s-in", "3", "--s-out", "5",
                   "--reps", "3", "--method", "exact", "--seed", "3", "--store", str(store)])
        assert rc == 0
        run_id = capsys.readouterr().out.split()[1]
        out_dir = tmp_path / "figs"
        rc = main(["report", "--run", run_id, "--kind", "bias_vs_sin",
                   "--out", str(out_dir), "--store", str(store)])
        assert rc == 0
        assert (out_dir / f"bias_vs_sin_{run_id}.csv").exists()
        assert (out_dir / f"bias_vs_sin_{run_id}.svg").exists()

    def test_report_json_dump(self, instance_path, tmp_path, capsys):
        store = tmp_path / "store"
        main(["optimize", "--instance", str(instance_path), "--method", "exact",
              "--scenarios", "2", "--seed", "2", "--store", str(store)])
        run_id = capsys.readouterr().out.split()[1]
        rc = main(["report", "--run", run_id, "--format", "json", "--store", str(store)])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["status"] == "Done" and "result" in doc

    def test_unknown_run_error(self, tmp_path, capsys):
        rc = main(["report", "--run", "nope", "--store", str(tmp_path / "store")])
        assert rc == 2
        assert "error" in capsys.readouterr().err
