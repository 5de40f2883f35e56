import math

import numpy as np
import pytest

from conftest import make_block, make_instance
from oracles import enumerate_schedules
from pitplan.blockmodel import UNMINED, OperatingMode, generate_synthetic
from pitplan.errors import InvalidArgs
from pitplan.evaluate import Schedule, ScheduleEvaluator, check_feasible
from pitplan.hybrid import (
    HybridConfig,
    HybridSearch,
    epsilon_schedule,
    fitness,
    greedy_initialize,
    hybrid_optimize,
    lns_repair,
    polish_schedule,
    write_trace_csv,
)
from pitplan.scenarios import builtin_scenarios, sample_lognormal
from pitplan.uncertainty import uncertainty_factors


class TestEpsilonSchedule:
    def test_start_is_eps0(self):
        assert epsilon_schedule(0, 100, 3.0, "linear") == pytest.approx(3.0)
        assert epsilon_schedule(0, 100, 3.0, "cosine") == pytest.approx(3.0)

    def test_end_is_zero(self):
        assert epsilon_schedule(100, 100, 3.0, "linear") == pytest.approx(0.0)
        assert epsilon_schedule(100, 100, 3.0, "cosine") == pytest.approx(0.0, abs=1e-15)

    def test_midpoint_and_dominance(self):
        # closed-form grid: cosine and linear cross at t = T/2 and cosine
        # dominates before it
        t_max, eps0 = 1000, 2.0
        assert epsilon_schedule(500, t_max, eps0, "linear") == pytest.approx(eps0 / 2)
        assert epsilon_schedule(500, t_max, eps0, "cosine") == pytest.approx(eps0 / 2)
        for t in range(0, 500):
            lin = epsilon_schedule(t, t_max, eps0, "linear")
            cos = epsilon_schedule(t, t_max, eps0, "cosine")
            assert cos >= lin - 1e-12
            assert cos == pytest.approx(eps0 * 0.5 * (1 + math.cos(math.pi * t / t_max)))

    def test_monotone_non_increasing(self):
        for kind in ("linear", "cosine"):
            values = [epsilon_schedule(t, 1000, 5.0, kind) for t in range(1001)]
            assert all(values[t + 1] <= values[t] + 1e-12 for t in range(1000))

    def test_invalid_args(self):
        with pytest.raises(InvalidArgs):
            epsilon_schedule(-1, 10, 1.0)
        with pytest.raises(InvalidArgs):
            epsilon_schedule(11, 10, 1.0)
        with pytest.raises(InvalidArgs):
            epsilon_schedule(5, 10, 1.0, "exp")


class TestGreedyInitialize:
    def test_single_block_earliest_period(self):
        blocks = [make_block(0, 100, (0, 0, 0), 1.0)]
        inst = make_instance(blocks, n_periods=3, capacity=200.0)
        sched = greedy_initialize(inst, builtin_scenarios(inst), None)
        assert sched.assignment[0] == 0

    def test_chain_respects_precedence(self):
        # capacity for one block per period -> parent at 0, child later
        blocks = [make_block(0, 100, (0, 0, 0), 1.0), make_block(1, 100, (0, 0, 1), 1.0)]
        inst = make_instance(blocks, precedence=[(0, 1)], n_periods=3, capacity=100.0)
        sched = greedy_initialize(inst, builtin_scenarios(inst), None)
        assert sched.assignment[0] == 0
        assert sched.assignment[1] >= 1

    def test_always_feasible(self):
        for seed in range(5):
            inst = generate_synthetic(27, (3, 3, 3), 3, 1, seed=seed, n_rock_types=1)
            scen = sample_lognormal(inst, 3, 0.3, seed=seed)
            sigma = uncertainty_factors(inst, scen.grades)
            sched = greedy_initialize(inst, scen, sigma, seed)
            assert check_feasible(inst, sched).violation == 0.0


class TestFitness:
    def _setup(self):
        inst = generate_synthetic(8, (2, 2, 2), 2, 1, seed=41, n_rock_types=1)
        scen = sample_lognormal(inst, 2, 0.3, seed=41)
        return inst, scen

    def test_feasible_equals_npv(self):
        inst, scen = self._setup()
        sched = greedy_initialize(inst, scen, None)
        npv = ScheduleEvaluator(inst, scen).npv_relaxed(sched)
        assert fitness(inst, sched, scen, None, eps=0.5, penalty=1e6) == pytest.approx(npv)

    def test_violation_at_tolerance_boundary(self):
        inst, scen = self._setup()
        sched = greedy_initialize(inst, scen, None)
        npv = ScheduleEvaluator(inst, scen).npv_relaxed(sched)
        report = check_feasible(inst, sched)
        # max(0, v - eps) with v == eps is zero
        assert fitness(inst, sched, scen, None, eps=report.violation, penalty=1e6) == pytest.approx(npv)

    def test_penalty_arithmetic(self):
        # violation = 3, eps = 1, penalty = 1e6 -> NPV - 2e6
        blocks = [
            make_block(0, 100, (0, 0, 0), 1.0),
            make_block(1, 100, (0, 0, 1), 1.0),
            make_block(2, 100, (1, 0, 1), 1.0),
            make_block(3, 100, (1, 1, 1), 1.0),
        ]
        inst = make_instance(blocks, precedence=[(0, 1), (0, 2), (0, 3)], n_periods=2)
        scen = builtin_scenarios(inst)
        sched = Schedule(np.array([UNMINED, 0, 0, 0]))  # three missing-parent pairs
        assert check_feasible(inst, sched).violation == pytest.approx(3.0)
        npv = ScheduleEvaluator(inst, scen).npv_relaxed(sched)
        got = fitness(inst, sched, scen, None, eps=1.0, penalty=1e6)
        assert got == pytest.approx(npv - 2e6)


class TestLnsRepair:
    def test_forced_single_slot(self):
        blocks = [make_block(0, 100, (0, 0, 0), 1.0), make_block(1, 100, (0, 0, 1), 1.0)]
        inst = make_instance(blocks, precedence=[(0, 1)], n_periods=2, capacity=150.0)
        scen = builtin_scenarios(inst)
        sched = Schedule(np.array([0, UNMINED]))
        out = lns_repair(inst, sched, [1], scen, None, seed=1)
        assert out.assignment[1] == 1  # period 0 is full

    def test_empty_unassigned_identity(self, tiny_instance):
        scen = sample_lognormal(tiny_instance, 2, 0.3, seed=2)
        sched = greedy_initialize(tiny_instance, scen, None)
        out = lns_repair(tiny_instance, sched, [], scen, None, seed=1)
        assert np.array_equal(out.assignment, sched.assignment)

    def test_capacity_violation_repaired(self):
        # over-capacity period with spare room later
        blocks = [make_block(b, 600, (b, 0, 0), 1.0) for b in range(3)]
        inst = make_instance(blocks, n_periods=2, capacity=1300.0)
        scen = builtin_scenarios(inst)
        sched = Schedule(np.array([0, 0, 0]))  # 1800 t in a 1300 t period
        assert check_feasible(inst, sched).violation > 0
        out = lns_repair(inst, sched, [], scen, None, seed=1)
        assert check_feasible(inst, out).violation == 0.0

    def test_never_increases_violation(self):
        inst = generate_synthetic(27, (3, 3, 3), 3, 1, seed=51, n_rock_types=1)
        scen = sample_lognormal(inst, 2, 0.3, seed=51)
        rng = np.random.default_rng(5)
        assign = rng.integers(-1, 3, size=27)
        sched = Schedule(assign)
        before = check_feasible(inst, sched).violation
        out = lns_repair(inst, sched, [], scen, None, seed=2)
        assert check_feasible(inst, out).violation <= before


class TestOperators:
    def _search(self, seed=3):
        inst = generate_synthetic(8, (2, 2, 2), 3, 1, seed=61, n_rock_types=1)
        scen = sample_lognormal(inst, 2, 0.3, seed=61)
        sigma = uncertainty_factors(inst, scen.grades)
        cfg = HybridConfig(population=8, t_max=4, g_max=1, neighborhoods=2, seed=seed)
        return HybridSearch(inst, scen, sigma, cfg)

    def test_crossover_of_identical_parents_is_identity(self):
        # GA phase fixed point: identical parents, zero mutation
        search = self._search()
        parent = search.greedy.assignment
        rng = np.random.default_rng(0)
        child = search._crossover(parent, parent.copy(), rng)
        assert np.array_equal(child, parent)

    def test_crossover_offspring_valid(self):
        search = self._search()
        rng = np.random.default_rng(1)
        a = search.greedy.assignment
        b = Schedule.empty(8).assignment
        for _ in range(20):
            child = search._crossover(a, b, rng)
            assert np.all((child >= UNMINED) & (child < 3))
            # precedence-valid by construction
            sched = Schedule(child)
            assert check_feasible(search.instance, sched).precedence_violations == 0

    def test_mutation_preserves_precedence(self):
        search = self._search()
        rng = np.random.default_rng(2)
        assign = search.greedy.assignment.copy()
        for _ in range(50):
            search._mutate(assign, rng, np.arange(8), rate=0.5)
            assert check_feasible(search.instance, Schedule(assign)).precedence_violations == 0

    def test_sa_zero_temperature_accepts_only_improvements(self):
        # the paper-form acceptance f_best > f_cur + random() * T degenerates
        # to strict improvement at T = 0
        rng = np.random.default_rng(3)
        for _ in range(100):
            f_cur, f_best = rng.normal(size=2)
            accept = f_best > f_cur + rng.random() * 0.0
            assert accept == (f_best > f_cur)


class TestPolish:
    def test_never_worse_and_feasible(self):
        inst = generate_synthetic(27, (3, 3, 3), 3, 1, seed=71, n_rock_types=1)
        scen = sample_lognormal(inst, 2, 0.3, seed=71)
        sigma = uncertainty_factors(inst, scen.grades)
        ev = ScheduleEvaluator(inst, scen, sigma)
        sched = greedy_initialize(inst, scen, sigma)
        out = polish_schedule(inst, ev, sched)
        assert ev.npv_relaxed(out) >= ev.npv_relaxed(sched) - 1e-9
        assert check_feasible(inst, out).violation == 0.0


class TestHybridOptimize:
    def _setup(self, seed):
        inst = generate_synthetic(8, (2, 2, 2), 3, 1, seed=100 + seed, n_rock_types=1)
        scen = sample_lognormal(inst, 2, 0.3, seed=200 + seed)
        sigma = uncertainty_factors(inst, scen.grades)
        return inst, scen, sigma

    def test_beats_greedy(self):
        inst, scen, sigma = self._setup(0)
        ev = ScheduleEvaluator(inst, scen, sigma)
        greedy_npv = ev.npv_relaxed(greedy_initialize(inst, scen, sigma, 3))
        cfg = HybridConfig(population=12, t_max=8, g_max=2, neighborhoods=2, seed=3)
        sched, trace = hybrid_optimize(inst, scen, sigma, cfg)
        assert ev.objective(sched) >= greedy_npv - 1e-9

    def test_near_oracle_optimum(self):
        hits = 0
        for seed in range(5):
            inst, scen, sigma = self._setup(seed)
            _, opt = enumerate_schedules(inst, scen, sigma)
            cfg = HybridConfig(population=20, t_max=15, g_max=2, neighborhoods=2, seed=seed)
            sched, _ = hybrid_optimize(inst, scen, sigma, cfg)
            val = ScheduleEvaluator(inst, scen, sigma).objective(sched)
            if val >= opt - 0.01 * abs(opt):
                hits += 1
        assert hits >= 4

    def test_trace_eps_matches_closed_form(self):
        inst, scen, sigma = self._setup(1)
        cfg = HybridConfig(population=8, t_max=6, g_max=1, neighborhoods=2,
                           eps0=1.5, eps_kind="cosine", seed=4)
        _, trace = hybrid_optimize(inst, scen, sigma, cfg)
        for row in trace:
            assert row.eps == pytest.approx(epsilon_schedule(row.iter, 6, 1.5, "cosine"))

    def test_best_fitness_monotone(self):
        inst, scen, sigma = self._setup(2)
        cfg = HybridConfig(population=10, t_max=10, g_max=2, neighborhoods=2, seed=5)
        _, trace = hybrid_optimize(inst, scen, sigma, cfg)
        values = [row.best_fitness for row in trace]
        assert all(values[k + 1] >= values[k] - 1e-9 for k in range(len(values) - 1))

    def test_returned_schedule_strictly_feasible(self):
        inst, scen, sigma = self._setup(3)
        cfg = HybridConfig(population=10, t_max=6, g_max=1, neighborhoods=2, seed=6)
        sched, _ = hybrid_optimize(inst, scen, sigma, cfg)
        assert check_feasible(inst, sched).violation == 0.0

    def test_deterministic_in_seed(self):
        inst, scen, sigma = self._setup(4)
        cfg = HybridConfig(population=10, t_max=6, g_max=1, neighborhoods=2, seed=7)
        s1, t1 = hybrid_optimize(inst, scen, sigma, cfg)
        s2, t2 = hybrid_optimize(inst, scen, sigma, HybridConfig(**{**cfg.__dict__}))
        assert np.array_equal(s1.assignment, s2.assignment)
        assert [r.__dict__ for r in t1] == [r.__dict__ for r in t2]

    def test_pause_resume_identical(self):
        inst, scen, sigma = self._setup(5)
        cfg = HybridConfig(population=10, t_max=8, g_max=1, neighborhoods=2, seed=8)
        s_full, t_full = hybrid_optimize(inst, scen, sigma, cfg)

        search = HybridSearch(inst, scen, sigma, HybridConfig(**{**cfg.__dict__}))
        state = {}

        def pauser(iteration, s):
            if iteration == 3 and not state:
                state["doc"] = s.state()
                return "pause"
            return "continue"

        search.run(pauser)
        resumed = HybridSearch(inst, scen, sigma, HybridConfig(**{**cfg.__dict__}))
        resumed.restore(state["doc"])
        s_res, t_res = resumed.run()
        assert np.array_equal(s_full.assignment, s_res.assignment)
        assert [r.__dict__ for r in t_full] == [r.__dict__ for r in t_res]

    def test_trace_csv(self, tmp_path):
        inst, scen, sigma = self._setup(6)
        cfg = HybridConfig(population=8, t_max=4, g_max=1, neighborhoods=2, seed=9)
        _, trace = hybrid_optimize(inst, scen, sigma, cfg)
        path = tmp_path / "trace.csv"
        write_trace_csv(trace, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,best_fitness,best_npv,violation,eps,temperature,accepted,operator"
        assert len(lines) == 5
