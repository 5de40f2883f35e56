import numpy as np
import pytest

from pitplan.blockmodel import generate_synthetic
from pitplan.errors import InvalidArgs
from pitplan.scenarios import (
    NeighborGraph,
    ScenarioSet,
    builtin_scenarios,
    filter_valid,
    geological_loss,
    sample_lognormal,
)


@pytest.fixture(scope="module")
def inst():
    return generate_synthetic(27, (3, 3, 3), 3, 1, seed=21, n_rock_types=2)


class TestLognormalSampler:
    def test_zero_sigma_reproduces_base(self, inst):
        scen = sample_lognormal(inst, 5, 0.0, seed=1)
        for s in range(5):
            assert scen.grades[s] == pytest.approx(inst.base_grades())

    def test_mean_preserving(self, inst):
        # law of large numbers: E[exp(s z - s^2/2)] = 1
        scen = sample_lognormal(inst, 10000, 0.3, seed=1)
        ratio = scen.grades.mean(axis=0) / inst.base_grades()
        assert np.all(np.abs(ratio - 1.0) < 0.02)

    def test_deterministic_in_seed(self, inst):
        a = sample_lognormal(inst, 16, 0.3, seed=5)
        b = sample_lognormal(inst, 16, 0.3, seed=5)
        assert a.digest() == b.digest()
        c = sample_lognormal(inst, 16, 0.3, seed=6)
        assert a.digest() != c.digest()

    def test_invalid_args(self, inst):
        with pytest.raises(InvalidArgs):
            sample_lognormal(inst, 0, 0.3, seed=1)
        with pytest.raises(InvalidArgs):
            sample_lognormal(inst, 4, -0.1, seed=1)

    def test_validity_populated(self, inst):
        scen = sample_lognormal(inst, 4, 0.3, seed=2)
        assert scen.validity is not None and scen.validity.shape == (4,)
        assert np.all(scen.validity >= 0)


class TestGeologicalLoss:
    def test_constant_field_zero(self, inst):
        graph = NeighborGraph.from_instance(inst)
        assert geological_loss(np.full(27, 3.0), graph) == pytest.approx(0.0)

    def test_matches_pairwise_formula(self, inst):
        graph = NeighborGraph.from_instance(inst)
        rngvals = np.linspace(0.5, 2.0, 27)
        expected = sum(
            w * (rngvals[i] - rngvals[j]) ** 2 / d2
            for i, j, w, d2 in zip(graph.i_idx, graph.j_idx, graph.w, graph.d2)
        )
        assert geological_loss(rngvals, graph) == pytest.approx(expected)


class TestFilterValid:
    def test_infinite_tau_is_identity(self, inst):
        scen = sample_lognormal(inst, 6, 0.3, seed=3)
        kept = filter_valid(scen, float("inf"))
        assert kept.n_s == 6
        assert kept.digest() == scen.digest()

    def test_zero_tau_keeps_only_constant_fields(self, inst):
        graph = NeighborGraph.from_instance(inst)
        grades = np.vstack([np.full(27, 1.5), np.linspace(0.5, 2.0, 27)])
        scen = ScenarioSet(grades=grades, rock_types=np.zeros_like(grades, dtype=int), source="Lognormal")
        scen.validity = geological_loss(grades, graph)
        kept = filter_valid(scen, 0.0)
        assert kept.n_s == 1
        assert kept.grades[0] == pytest.approx(np.full(27, 1.5))

    def test_mixed_threshold(self, inst):
        # scenarios with known losses {0.1, 0.5}, tau = 0.3 -> one kept
        scen = ScenarioSet(
            grades=np.ones((2, 27)),
            rock_types=np.zeros((2, 27), dtype=int),
            source="Lognormal",
            validity=np.array([0.1, 0.5]),
        )
        kept = filter_valid(scen, 0.3)
        assert kept.n_s == 1
        assert kept.validity[0] == pytest.approx(0.1)

    def test_order_preserved(self, inst):
        scen = sample_lognormal(inst, 10, 0.3, seed=4)
        tau = float(np.median(scen.validity))
        kept = filter_valid(scen, tau)
        kept_idx = [k for k in range(10) if scen.validity[k] < tau + 1e-12]
        assert np.array_equal(kept.grades, scen.grades[kept_idx])

    def test_empty_result_is_valid(self, inst):
        scen = sample_lognormal(inst, 4, 0.3, seed=5)
        kept = filter_valid(scen, -1.0)
        assert kept.n_s == 0


class TestBuiltinScenarios:
    def test_uses_stored_values(self, inst):
        scen = builtin_scenarios(inst)
        assert scen.meta["use_stored_values"]
        assert scen.n_s == inst.n_scenarios_builtin
        assert scen.rock_types.shape == (scen.n_s, inst.n_blocks)
